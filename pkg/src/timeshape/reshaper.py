"""Many-to-one LSTM over inter-packet delays, and timestamp reshaping with it.

The model reads a window of ``W`` past packets and predicts the (min-max
normalized) delay before the current packet.  Step ``k`` of a window receives a
3-vector::

    (norm_delta[j], norm_size[j], 0)          j = i - W + k
    (norm_delta[j], norm_size[j], norm_size[i])   on the last step

so the current packet's size rides along on the final step.  The first packet
of a trace has no predecessor and is given delay 0.

Network: one LSTM layer (hidden width 32, gate order input/forget/cell/output)
unrolled over the window, its last hidden state through a 32x8 ReLU layer and
an 8x1 sigmoid layer.  Training is teacher-forced full BPTT with Adam on the
mean squared error; generation is free-running and feeds each predicted delay
back into the window.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .nids.common import has_spread
from .seeds import rng_for
from .trace_io import PacketRecord, TrafficTrace, quantize_time

HIDDEN = 32
DENSE = 8
INPUT_DIM = 3
DELTA_FLOOR = 1e-6
PARAM_NAMES = ("lstm_Wx", "lstm_Wh", "lstm_b", "dense1_W", "dense1_b", "dense2_W", "dense2_b")
FILE_MAGIC = "timeshape-reshaper"
FILE_VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"loss became NaN at epoch {epoch}, batch {batch}")


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class Normalizer:
    """Min-max bounds for delays (seconds) and sizes (bytes)."""

    delta_min: float
    delta_max: float
    size_min: float
    size_max: float

    @classmethod
    def fit(cls, deltas: np.ndarray, sizes: np.ndarray) -> "Normalizer":
        dmin, dmax = float(np.min(deltas)), float(np.max(deltas))
        # microsecond timestamps leave ~1e-17 s of float noise on equal delays
        if not has_spread(dmin, dmax):
            dmax = dmin + max(dmin, 1e-6)
        smin, smax = float(np.min(sizes)), float(np.max(sizes))
        if not smax > smin:
            smax = smin + 1.0
        return cls(max(dmin, 0.0), dmax, smin, smax)

    def delta(self, d):
        return np.clip((np.asarray(d, dtype=float) - self.delta_min) / (self.delta_max - self.delta_min), 0.0, 1.0)

    def size(self, s):
        return np.clip((np.asarray(s, dtype=float) - self.size_min) / (self.size_max - self.size_min), 0.0, 1.0)

    def delta_inv(self, u):
        return self.delta_min + np.asarray(u, dtype=float) * (self.delta_max - self.delta_min)


@dataclass(frozen=True)
class TrainingWindow:
    inputs: np.ndarray  # (W, 3)
    target: float


@dataclass
class WindowSet:
    """All training windows of one trace, stored as dense arrays."""

    inputs: np.ndarray  # (N, W, 3)
    targets: np.ndarray  # (N,)
    norm: Normalizer

    def __len__(self):
        return len(self.targets)

    def __getitem__(self, i) -> TrainingWindow:
        return TrainingWindow(self.inputs[i], float(self.targets[i]))

    @property
    def window(self) -> int:
        return self.inputs.shape[1]


def trace_deltas(trace: TrafficTrace) -> np.ndarray:
    ts = trace.timestamps()
    return np.concatenate([[0.0], np.diff(ts)])


def build_windows(trace: TrafficTrace, W: int, norm: Optional[Normalizer] = None) -> WindowSet:
    if W < 1:
        raise ValueError("window size must be >= 1")
    n = len(trace)
    if n < W + 1:
        raise ValueError(f"trace of {n} packets is too short for window {W}")
    d = trace_deltas(trace)
    s = trace.sizes()
    if norm is None:
        norm = Normalizer.fit(d[1:], s)
    nd, ns = norm.delta(d), norm.size(s)
    idx = np.arange(W, n)[:, None] - W + np.arange(W)[None, :]  # (N, W) past indices
    X = np.zeros((n - W, W, INPUT_DIM))
    X[:, :, 0] = nd[idx]
    X[:, :, 1] = ns[idx]
    X[:, -1, 2] = ns[W:]
    return WindowSet(X, nd[W:].copy(), norm)


# -- model -----------------------------------------------------------------------

@dataclass
class ReshaperModel:
    window: int
    params: Dict[str, np.ndarray]
    norm: Optional[Normalizer] = None
    seed_deltas: Optional[np.ndarray] = None  # raw seconds, oldest first
    seed_sizes: Optional[np.ndarray] = None
    delta_floor: float = DELTA_FLOOR
    trained: bool = False
    hidden: int = HIDDEN

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window size must be >= 1")
        if self.hidden != HIDDEN:
            raise ValueError(f"hidden width is fixed at {HIDDEN}")
        shapes = param_shapes()
        for k, shp in shapes.items():
            if k not in self.params:
                raise ValueError(f"missing parameter {k}")
            if self.params[k].shape != shp:
                raise ValueError(f"{k} has shape {self.params[k].shape}, expected {shp}")
            if not np.all(np.isfinite(self.params[k])):
                raise ValueError(f"{k} holds non-finite values")

    def copy(self) -> "ReshaperModel":
        return copy.deepcopy(self)


def param_shapes(input_dim: int = INPUT_DIM) -> Dict[str, Tuple[int, ...]]:
    H = HIDDEN
    return {
        "lstm_Wx": (input_dim, 4 * H),
        "lstm_Wh": (H, 4 * H),
        "lstm_b": (4 * H,),
        "dense1_W": (H, DENSE),
        "dense1_b": (DENSE,),
        "dense2_W": (DENSE, 1),
        "dense2_b": (1,),
    }


def zero_params() -> Dict[str, np.ndarray]:
    return {k: np.zeros(s) for k, s in param_shapes().items()}


def init_params(seed: int) -> Dict[str, np.ndarray]:
    """Glorot-uniform input kernels, orthogonal recurrent kernel, forget bias 1."""
    rng = rng_for(seed, "reshaper-init")
    H = HIDDEN

    def glorot(fan_in, fan_out):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=(fan_in, fan_out))

    q, r = np.linalg.qr(rng.normal(size=(4 * H, H)))
    q = q * np.sign(np.diag(r))
    b = np.zeros(4 * H)
    b[H : 2 * H] = 1.0
    return {
        "lstm_Wx": glorot(INPUT_DIM, 4 * H),
        "lstm_Wh": q.T.copy(),
        "lstm_b": b,
        "dense1_W": glorot(H, DENSE),
        "dense1_b": np.zeros(DENSE),
        "dense2_W": glorot(DENSE, 1),
        "dense2_b": np.zeros(1),
    }


def new_model(window: int, seed: int = 0) -> ReshaperModel:
    return ReshaperModel(window=window, params=init_params(seed))


# -- forward / backward ----------------------------------------------------------

def _forward(params, X, keep=False):
    """Batched forward pass.  X is (B, W, D); returns predictions (B,) and a cache."""
    B, W, _ = X.shape
    H = HIDDEN
    Wh = params["lstm_Wh"]
    zx = X @ params["lstm_Wx"] + params["lstm_b"]  # (B, W, 4H)
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    cache = []
    for t in range(W):
        z = zx[:, t] + h @ Wh
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = sigmoid(z[:, 3 * H :])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        if keep:
            cache.append((h_prev, c_prev, i, f, g, o, tc))
    a1 = h @ params["dense1_W"] + params["dense1_b"]
    r = np.maximum(a1, 0.0)
    a2 = r @ params["dense2_W"] + params["dense2_b"]
    y = sigmoid(a2[:, 0])
    return y, (cache, h, a1, r, y)


def forward(model: ReshaperModel, window) -> float:
    """Predicted normalized delay for one window (array (W, 3) or TrainingWindow)."""
    X = window.inputs if isinstance(window, TrainingWindow) else np.asarray(window, dtype=float)
    if X.shape != (model.window, INPUT_DIM):
        raise ValueError(f"window has shape {X.shape}, model expects {(model.window, INPUT_DIM)}")
    y, _ = _forward(model.params, X[None])
    return float(y[0])


def predict_batch(params, X) -> np.ndarray:
    return _forward(params, X)[0]


def loss_and_grads(params, X, targets):
    """Mean squared error over the batch and its gradient for every parameter."""
    B = X.shape[0]
    H = HIDDEN
    y, (cache, h_last, a1, r, _) = _forward(params, X, keep=True)
    diff = y - targets
    loss = float(np.mean(diff * diff))

    g = {k: np.zeros_like(v) for k, v in params.items()}
    da2 = (2.0 / B) * diff * y * (1.0 - y)  # (B,)
    g["dense2_W"] = r.T @ da2[:, None]
    g["dense2_b"] = np.array([da2.sum()])
    dr = da2[:, None] @ params["dense2_W"].T
    da1 = dr * (a1 > 0)
    g["dense1_W"] = h_last.T @ da1
    g["dense1_b"] = da1.sum(axis=0)
    dh = da1 @ params["dense1_W"].T
    dc = np.zeros((B, H))

    Wh = params["lstm_Wh"]
    dWx = np.zeros_like(params["lstm_Wx"])
    dWh = np.zeros_like(Wh)
    db = np.zeros_like(params["lstm_b"])
    for t in range(X.shape[1] - 1, -1, -1):
        h_prev, c_prev, i, f, gg, o, tc = cache[t]
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        di = dc * gg
        df = dc * c_prev
        dg = dc * i
        dz = np.concatenate(
            [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - gg * gg), do * o * (1.0 - o)], axis=1
        )
        dWx += X[:, t].T @ dz
        dWh += h_prev.T @ dz
        db += dz.sum(axis=0)
        dh = dz @ Wh.T
        dc = dc * f
    g["lstm_Wx"], g["lstm_Wh"], g["lstm_b"] = dWx, dWh, db
    return loss, g


# -- training --------------------------------------------------------------------

class Adam:
    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k in params:
            self.m[k] = b1 * self.m[k] + (1 - b1) * grads[k]
            self.v[k] = b2 * self.v[k] + (1 - b2) * grads[k] ** 2
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def train(
    model: ReshaperModel,
    windows: WindowSet,
    epochs: int,
    lr: float = 0.001,
    batch_size: int = 32,
    seed: int = 0,
    log=None,
) -> Tuple[ReshaperModel, List[float]]:
    """Adam on the mean squared delay error; returns a new model and per-epoch losses."""
    if len(windows) == 0:
        raise ValueError("no training windows")
    if windows.window != model.window:
        raise ValueError(f"windows of size {windows.window} do not fit a model of window {model.window}")
    out = model.copy()
    out.norm = windows.norm
    params = out.params
    opt = Adam(params, lr=lr)
    rng = rng_for(seed, "reshaper-shuffle")
    N = len(windows)
    losses = []
    for epoch in range(epochs):
        order = rng.permutation(N)
        total = 0.0
        for bi, start in enumerate(range(0, N, batch_size)):
            idx = order[start : start + batch_size]
            loss, grads = loss_and_grads(params, windows.inputs[idx], windows.targets[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, bi)
            total += loss * len(idx)
            if lr != 0.0:
                opt.step(params, grads)
        losses.append(total / N)
        if log:
            log(f"epoch {epoch + 1}/{epochs} loss {losses[-1]:.6g}")
    out.trained = True
    return out, losses


def fit_reshaper(
    benign: TrafficTrace, window: int, epochs: int, seed: int = 0, lr: float = 0.001,
    batch_size: int = 32, log=None,
) -> Tuple[ReshaperModel, List[float]]:
    """Build windows from a benign trace, train, and record the seed history."""
    benign.require_nonempty()
    if any(lab != "benign" for lab in benign.labels()):
        raise ValueError("reshaper training data must be benign-only")
    windows = build_windows(benign, window)
    model, losses = train(new_model(window, seed), windows, epochs, lr=lr, batch_size=batch_size,
                          seed=seed, log=log)
    d = trace_deltas(benign)
    model.seed_deltas = d[-window:].copy()
    model.seed_sizes = benign.sizes()[-window:].copy()
    return model, losses


# -- reshaping -------------------------------------------------------------------

@dataclass(frozen=True)
class HistoryState:
    """Sliding window of normalized (delay, size) pairs plus the last emitted time."""

    deltas: np.ndarray
    sizes: np.ndarray
    last_time: float
    steps: int = 0


def _require_ready(model: ReshaperModel):
    if not model.trained or model.norm is None or model.seed_deltas is None:
        raise ValueError("reshaper model is untrained")


def seed_history(model: ReshaperModel, start_time: float = 0.0) -> HistoryState:
    """Initial history: the last ``W`` packets of the benign training trace."""
    _require_ready(model)
    return HistoryState(
        deltas=model.norm.delta(model.seed_deltas),
        sizes=model.norm.size(model.seed_sizes),
        last_time=float(start_time),
    )


def _push(state: HistoryState, nd: float, ns: float, last_time: float, steps: int) -> HistoryState:
    return HistoryState(
        deltas=np.append(state.deltas[1:], nd),
        sizes=np.append(state.sizes[1:], ns),
        last_time=last_time,
        steps=steps,
    )


def predict_delta(model: ReshaperModel, state: HistoryState, size: float) -> float:
    """Denormalized, floored delay the model assigns to a packet of ``size`` bytes."""
    X = np.empty((1, model.window, INPUT_DIM))
    X[0, :, 0] = state.deltas
    X[0, :, 1] = state.sizes
    X[0, :, 2] = 0.0
    X[0, -1, 2] = model.norm.size(size)
    u = float(_forward(model.params, X)[0][0])
    return max(float(model.norm.delta_inv(u)), model.delta_floor)


def reshape_step(model: ReshaperModel, state: Optional[HistoryState], packet: PacketRecord):
    """Emit the next packet's timestamp; returns (timestamp, new state)."""
    if state is None:
        raise ValueError("history state is uninitialized; call seed_history first")
    _require_ready(model)
    d = predict_delta(model, state, packet.size)
    t = quantize_time(state.last_time + d)
    new = _push(state, float(model.norm.delta(d)), float(model.norm.size(packet.size)), t, state.steps + 1)
    return t, new


def inject_observation(model: ReshaperModel, state: HistoryState, delta: float, size: float) -> HistoryState:
    """Fold an externally observed packet (e.g. a target response) into the window."""
    if state is None:
        raise ValueError("history state is uninitialized; call seed_history first")
    nd = float(model.norm.delta(max(delta, 0.0)))
    return _push(state, nd, float(model.norm.size(size)), state.last_time, state.steps)


def reshape_offline(model: ReshaperModel, malicious: TrafficTrace) -> TrafficTrace:
    """Rewrite every timestamp of a trace with free-running predictions."""
    _require_ready(model)
    if len(malicious) < model.window + 1:
        raise ValueError(f"trace of {len(malicious)} packets is too short for window {model.window}")
    state = seed_history(model, malicious[0].timestamp)
    times = []
    for rec in malicious:
        t, state = reshape_step(model, state, rec)
        times.append(t)
    return malicious.with_timestamps(times)


# -- model files -----------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def save_model(model: ReshaperModel, path) -> None:
    lines = [
        f"{FILE_MAGIC} {FILE_VERSION}",
        f"window {model.window}",
        f"hidden {model.hidden}",
        f"input {INPUT_DIM}",
        f"dense {DENSE}",
        f"delta_floor {_fmt(model.delta_floor)}",
        f"trained {int(model.trained)}",
    ]
    if model.norm is not None:
        n = model.norm
        lines.append(f"delta_norm {_fmt(n.delta_min)} {_fmt(n.delta_max)}")
        lines.append(f"size_norm {_fmt(n.size_min)} {_fmt(n.size_max)}")
    arrays = [(k, model.params[k]) for k in PARAM_NAMES]
    if model.seed_deltas is not None:
        arrays += [("seed_deltas", model.seed_deltas), ("seed_sizes", model.seed_sizes)]
    for name, arr in arrays:
        arr = np.asarray(arr, dtype=float)
        lines.append(f"array {name} " + " ".join(str(s) for s in arr.shape))
        rows = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr[None, :]
        for row in rows:
            lines.append(" ".join(_fmt(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> ReshaperModel:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    head = lines[0].split()
    if head[0] != FILE_MAGIC or int(head[1]) != FILE_VERSION:
        raise ValueError(f"{path}: not a version-{FILE_VERSION} reshaper model")
    meta, arrays = {}, {}
    k = 1
    while k < len(lines):
        parts = lines[k].split()
        if parts[0] == "array":
            name = parts[1]
            shape = tuple(int(s) for s in parts[2:])
            nrows = shape[0] if len(shape) > 1 else 1
            vals = []
            for row in lines[k + 1 : k + 1 + nrows]:
                vals.extend(float(v) for v in row.split())
            arrays[name] = np.array(vals).reshape(shape)
            k += 1 + nrows
        else:
            meta[parts[0]] = parts[1:]
            k += 1
    if int(meta["hidden"][0]) != HIDDEN or int(meta["input"][0]) != INPUT_DIM:
        raise ValueError(f"{path}: unsupported dimensions")
    norm = None
    if "delta_norm" in meta:
        dn, sn = meta["delta_norm"], meta["size_norm"]
        norm = Normalizer(float(dn[0]), float(dn[1]), float(sn[0]), float(sn[1]))
    return ReshaperModel(
        window=int(meta["window"][0]),
        params={n: arrays[n] for n in PARAM_NAMES},
        norm=norm,
        seed_deltas=arrays.get("seed_deltas"),
        seed_sizes=arrays.get("seed_sizes"),
        delta_floor=float(meta["delta_floor"][0]),
        trained=bool(int(meta["trained"][0])),
    )
