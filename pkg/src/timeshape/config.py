"""TOML config loading."""

from __future__ import annotations

import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def load_config(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)
