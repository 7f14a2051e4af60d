"""Numpy MLP surrogate for the macro-step propagation operator.

Fully connected network, GELU hidden activations, linear output, trained by
mini-batch Adam on an L1 loss with a two-stage schedule (the second stage
enlarges the batch and lowers the learning rate).  Gradients are written out
by hand; everything runs in float64 so training is bit-reproducible for a
fixed seed.
"""
from __future__ import annotations

import base64
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erf, ndtr

from .errors import CorruptCheckpoint, DimensionMismatch, FormatVersionMismatch, NonFiniteLoss
from .integrator import Trajectory
from .kinetics import ReactionNetwork, State, network_fingerprint
from .transforms import TransformSpec, scale_inputs, unscale_prediction

FORMAT_VERSION = 1
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    """x * Phi(x) with the exact erf-based normal CDF."""
    x = np.asarray(x, dtype=float)
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    x = np.asarray(x, dtype=float)
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


@dataclass
class MLP:
    layer_sizes: list
    weights: list  # W_l with shape (fan_in, fan_out)
    biases: list
    activation: str = "gelu"
    init: str = "glorot_uniform"

    def __post_init__(self):
        self.layer_sizes = [int(s) for s in self.layer_sizes]
        if len(self.weights) != len(self.layer_sizes) - 1:
            raise DimensionMismatch("one weight matrix per consecutive layer pair expected")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.layer_sizes[l], self.layer_sizes[l + 1]) or b.shape != (self.layer_sizes[l + 1],):
                raise DimensionMismatch(f"layer {l} parameter shapes {W.shape}, {b.shape} "
                                        f"inconsistent with sizes {self.layer_sizes}")

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def params(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "MLP":
        return MLP(list(self.layer_sizes), [W.copy() for W in self.weights], [b.copy() for b in self.biases],
                   self.activation, self.init)

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, theta):
        theta = np.asarray(theta, dtype=float)
        i = 0
        for p in self.params():
            p[...] = theta[i:i + p.size].reshape(p.shape)
            i += p.size

    def n_params(self) -> int:
        return sum(p.size for p in self.params())


def init_mlp(layer_sizes, seed: int = 0) -> MLP:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    Ws, bs = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        Ws.append(rng.uniform(-limit, limit, (fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return MLP(list(layer_sizes), Ws, bs)


def _forward_cache(m: MLP, X):
    # pre keeps (z, Phi(z)) per hidden layer so the backward pass reuses the CDF
    pre, act = [], [X]
    h = X
    last = len(m.weights) - 1
    for l, (W, b) in enumerate(zip(m.weights, m.biases)):
        z = h @ W + b
        if l < last:
            cdf = ndtr(z)
            pre.append((z, cdf))
            h = z * cdf
        else:
            h = z
        act.append(h)
    return pre, act


def forward(m: MLP, x):
    """Network output for one input vector or a batch of rows."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != m.n_in:
        raise DimensionMismatch(f"model expects {m.n_in} inputs, got {x.shape[-1]}")
    return _forward_cache(m, x)[1][-1]


def l1_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise DimensionMismatch(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(pred - target)))


def loss_and_grads(m: MLP, X, Y):
    """L1 loss and its parameter gradients (sign(0) taken as 0)."""
    pre, act = _forward_cache(m, X)
    diff = act[-1] - Y
    loss = float(np.mean(np.abs(diff)))
    delta = np.sign(diff) / diff.size
    grads = [None] * (2 * len(m.weights))
    for l in range(len(m.weights) - 1, -1, -1):
        grads[2 * l] = act[l].T @ delta
        grads[2 * l + 1] = delta.sum(axis=0)
        if l > 0:
            z, cdf = pre[l - 1]
            delta = (delta @ m.weights[l].T) * (cdf + z * _INV_SQRT_2PI * np.exp(-0.5 * z * z))
    return loss, grads


@dataclass(frozen=True)
class TrainConfig:
    stage1_epochs: int = 300
    stage1_batch: int = 1024
    stage1_lr: float = 1e-4
    stage2_epochs: int = 300
    stage2_batch_multiplier: int = 256
    stage2_lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not (self.stage1_lr > 0 and self.stage2_lr > 0):
            raise ValueError("learning rates must be > 0")
        if self.stage1_batch < 1 or self.stage2_batch_multiplier < 1:
            raise ValueError("batch sizes must be >= 1")

    @classmethod
    def full_scale(cls, seed: int = 0) -> "TrainConfig":
        return cls(stage1_epochs=2500, stage2_epochs=2500, seed=seed)


class _Adam:
    def __init__(self, params, cfg: TrainConfig):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0
        self.cfg = cfg

    def step(self, params, grads, lr):
        b1, b2, eps = self.cfg.beta1, self.cfg.beta2, self.cfg.eps
        self.t += 1
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def _eval_loss(m: MLP, X, Y, chunk=8192) -> float:
    if len(X) == 0:
        return float("nan")
    total = 0.0
    for i in range(0, len(X), chunk):
        total += np.abs(forward(m, X[i:i + chunk]) - Y[i:i + chunk]).sum()
    return float(total / Y.size)


def train(m: MLP, train_ds, val_ds, cfg: TrainConfig, log=None):
    """Two-stage Adam/L1 training.  Returns (trained copy, history).

    history has per-epoch ``train_loss`` (batch-weighted mean over the
    epoch), ``val_loss`` (full pass after the epoch) and ``stage``.
    """
    X, Y = train_ds.inputs, train_ds.labels
    if len(X) == 0:
        raise ValueError("empty training set")
    if X.shape[1] != m.n_in or Y.shape[1] != m.n_out:
        raise DimensionMismatch(f"dataset dims ({X.shape[1]}, {Y.shape[1]}) do not match model "
                                f"({m.n_in}, {m.n_out})")
    model = m.copy()
    history = {"train_loss": [], "val_loss": [], "stage": []}
    rng = np.random.default_rng(cfg.seed)
    params = model.params()
    opt = _Adam(params, cfg)
    n = len(X)
    stages = [(1, cfg.stage1_epochs, cfg.stage1_batch, cfg.stage1_lr),
              (2, cfg.stage2_epochs, min(cfg.stage1_batch * cfg.stage2_batch_multiplier, n), cfg.stage2_lr)]
    epoch = 0
    for stage, n_epochs, batch, lr in stages:
        batch = max(1, min(batch, n))
        for _ in range(n_epochs):
            perm = rng.permutation(n)
            acc = 0.0
            for start in range(0, n, batch):
                idx = perm[start:start + batch]
                loss, grads = loss_and_grads(model, X[idx], Y[idx])
                if not math.isfinite(loss):
                    raise NonFiniteLoss(f"non-finite loss at epoch {epoch}, stage {stage}, batch offset {start}")
                acc += loss * len(idx)
                opt.step(params, grads, lr)
            epoch += 1
            history["train_loss"].append(acc / n)
            history["val_loss"].append(_eval_loss(model, val_ds.inputs, val_ds.labels) if val_ds is not None else float("nan"))
            history["stage"].append(stage)
            if log is not None:
                log(epoch, stage, history["train_loss"][-1], history["val_loss"][-1])
    return model, history


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

def predict_batch(m: MLP, spec: TransformSpec, net: ReactionNetwork, Y, T=None, rho=None):
    """Vectorized predict_step; returns (Y_next, T_next)."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    x = scale_inputs(Y, spec, T, rho)
    if x.shape[1] != m.n_in:
        raise DimensionMismatch(f"model expects {m.n_in} inputs, state gives {x.shape[1]}")
    pred = forward(m, x)
    Y_next = unscale_prediction(pred, Y, spec, renormalize=net.conserved_sum)
    T_next = T
    if T is not None and net.thermo is not None and net.has_thermo_state:
        dT = -((Y_next - Y) @ np.asarray(net.thermo.enthalpies)) / net.thermo.cp
        T_next = np.asarray(T, dtype=float) + dT
    return Y_next, T_next


def predict_step(m: MLP, spec: TransformSpec, net: ReactionNetwork, s: State) -> State:
    T = None if s.T is None else np.array([s.T])
    rho = None if s.rho is None else np.array([s.rho])
    Yn, Tn = predict_batch(m, spec, net, s.Y[None, :], T, rho)
    return State(Yn[0], None if Tn is None else float(np.asarray(Tn)[0]), s.rho)


def rollout(m: MLP, spec: TransformSpec, net: ReactionNetwork, s0: State, n_steps: int) -> Trajectory:
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    states = [s0.copy()]
    s = s0
    for _ in range(n_steps):
        s = predict_step(m, spec, net, s)
        states.append(s)
    times = [k * spec.dt for k in range(n_steps + 1)]
    return Trajectory(times, states, {"solver": "surrogate", "label_transform": spec.label_transform})


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    model: MLP
    spec: TransformSpec
    network_fingerprint: str | None = None
    history: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def _encode_params(m: MLP) -> str:
    parts = []
    for W, b in zip(m.weights, m.biases):
        parts.append(np.ascontiguousarray(W, dtype="<f8").tobytes(order="C"))
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return base64.b64encode(b"".join(parts)).decode("ascii")


def _float_list(xs):
    return [None if not math.isfinite(v) else float(v) for v in xs]


def checkpoint_dict(m: MLP, spec: TransformSpec, net: ReactionNetwork | None = None,
                    history: dict | None = None, extra: dict | None = None) -> dict:
    hist = {}
    for k, v in (history or {}).items():
        hist[k] = [int(x) for x in v] if k == "stage" else _float_list(v)
    return {
        "format_version": FORMAT_VERSION,
        "layer_sizes": list(m.layer_sizes),
        "activation": m.activation,
        "init": m.init,
        "transform_spec": spec.to_dict(),
        "network_fingerprint": None if net is None else network_fingerprint(net),
        "params_base64": _encode_params(m),
        "history": hist,
        "extra": extra or {},
    }


def save_checkpoint(m: MLP, spec: TransformSpec, path, net: ReactionNetwork | None = None,
                    history: dict | None = None, extra: dict | None = None):
    text = json.dumps(checkpoint_dict(m, spec, net, history, extra), sort_keys=True, indent=1)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_checkpoint(path) -> Checkpoint:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: {exc}") from exc
    if not isinstance(d, dict) or "format_version" not in d:
        raise CorruptCheckpoint(f"{path}: not a checkpoint envelope")
    if d["format_version"] != FORMAT_VERSION:
        raise FormatVersionMismatch(f"{path}: format_version {d['format_version']}, expected {FORMAT_VERSION}")
    try:
        sizes = [int(s) for s in d["layer_sizes"]]
        raw = base64.b64decode(d["params_base64"], validate=True)
        theta = np.frombuffer(raw, dtype="<f8").astype(float)
        spec = TransformSpec.from_dict(d["transform_spec"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpoint(f"{path}: {exc}") from exc
    expected = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    if theta.size != expected:
        raise CorruptCheckpoint(f"{path}: {theta.size} parameters, layer sizes need {expected}")
    Ws, bs, i = [], [], 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        Ws.append(theta[i:i + a * b].reshape(a, b).copy())
        i += a * b
        bs.append(theta[i:i + b].copy())
        i += b
    model = MLP(sizes, Ws, bs, d.get("activation", "gelu"), d.get("init", "glorot_uniform"))
    return Checkpoint(model, spec, d.get("network_fingerprint"), d.get("history", {}), d.get("extra", {}))


def load_checkpoint(path):
    """Returns (MLP, TransformSpec)."""
    ck = read_checkpoint(path)
    return ck.model, ck.spec
