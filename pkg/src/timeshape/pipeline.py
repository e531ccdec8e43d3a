"""Shared featurize-then-score path used by the experiments and the network simulator.

Every evaluated trace is scored as a continuation of the same benign stream:
an extractor is first run over a benign context trace, and each evaluated
trace is appended after it (shifted to start one median benign delay after the
context ends).  Before/after comparisons thus see identical history.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .features import DEFAULT_LAMBDAS, ExtractorState, featurize
from .trace_io import PacketRecord, TrafficTrace


class FeatureContext:
    def __init__(self, context: TrafficTrace, lambdas: Sequence[float] = DEFAULT_LAMBDAS):
        context.require_nonempty()
        self.lambdas = list(lambdas)
        self.state = ExtractorState(self.lambdas)
        self.context_features = featurize(context, self.state)
        ts = context.timestamps()
        self.end_time = float(ts[-1])
        self.gap = float(np.median(np.diff(ts))) if len(ts) > 1 else 0.0

    @property
    def n_features(self) -> int:
        return self.state.n_features

    def offset_for(self, start_time: float) -> float:
        return self.end_time + self.gap - start_time

    def fresh_state(self) -> ExtractorState:
        return self.state.copy()

    def features(self, trace: TrafficTrace | Sequence[PacketRecord], start_time: float | None = None) -> np.ndarray:
        """Features of ``trace`` as if it followed the context.

        ``start_time`` is the time mapped to the context's continuation point
        (default: the trace's first timestamp).
        """
        records = trace.records if isinstance(trace, TrafficTrace) else list(trace)
        if start_time is None:
            start_time = records[0].timestamp
        return featurize(records, self.fresh_state(), self.offset_for(start_time))
