"""Box-Cox style scalings for surrogate inputs and labels.

Inputs are ``[T, rho, B(Y)]`` with B the Box-Cox transform; labels are
``G((B(Y_next) - B(Y)) / dt)`` with G the odd power map

    G(x) = sign(x) * |x|**lambda_b / lambda_b

followed by per-column Z-scoring.  Every map has an exact inverse so that a
network prediction can be turned back into a next state.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatch, EmptyData, NegativeInput

LABEL_TRANSFORMS = ("gbct", "bct")
STD_FLOOR = 1e-12


def _pow10(a, lam):
    """|a|**lam evaluated in base 10, so exact decades map to exact decades."""
    with np.errstate(divide="ignore"):
        return 10.0 ** (lam * np.log10(a))


def bct(x, lambda_a: float = 0.1):
    """(x**lambda_a - 1) / lambda_a; ln(x) when lambda_a == 0; B(0) = -1/lambda_a."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise NegativeInput("Box-Cox transform needs x >= 0")
    with np.errstate(divide="ignore"):
        lx = np.log(x)
        if lambda_a == 0:
            out = lx
        else:
            out = np.expm1(lambda_a * lx) / lambda_a
    return out[()] if out.ndim == 0 else out


def bct_inv(z, lambda_a: float = 0.1):
    """Inverse Box-Cox; inputs below -1/lambda_a are clamped to that bound (-> 0)."""
    z = np.asarray(z, dtype=float)
    if lambda_a == 0:
        out = np.exp(z)
    else:
        w = np.maximum(lambda_a * z, -1.0)
        with np.errstate(divide="ignore"):
            out = np.exp(np.log1p(w) / lambda_a)
    return out[()] if out.ndim == 0 else out


def gbct(x, lambda_b: float = 0.5):
    """Odd extension of the Box-Cox power: sign(x) |x|**lambda_b / lambda_b."""
    x = np.asarray(x, dtype=float)
    out = np.sign(x) * _pow10(np.abs(x), lambda_b) / lambda_b
    return out[()] if out.ndim == 0 else out


def gbct_inv(z, lambda_b: float = 0.5):
    z = np.asarray(z, dtype=float)
    out = np.sign(z) * _pow10(lambda_b * np.abs(z), 1.0 / lambda_b)
    return out[()] if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Z-score
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ZScore:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self):
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


def zscore_fit(data) -> ZScore:
    """Per-column population mean/std; near-constant columns get std 1."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[0] < 2:
        raise EmptyData("Z-score fitting needs at least 2 rows")
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    std = np.where(std < STD_FLOOR, 1.0, std)
    return ZScore(mean, std)


def zscore_apply(data, stats: ZScore):
    return (np.asarray(data, dtype=float) - stats.mean) / stats.std


def zscore_inv(data, stats: ZScore):
    return np.asarray(data, dtype=float) * stats.std + stats.mean


# ---------------------------------------------------------------------------
# surrogate input / label construction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransformSpec:
    """Everything needed to map raw states to network inputs/labels and back.

    ``label_transform`` selects the label map: ``"gbct"`` applies G,
    ``"bct"`` leaves the Box-Cox rate untouched (the baseline).
    ``thermo`` lists which of ("T", "rho") lead the input vector.
    """

    lambda_a: float = 0.1
    lambda_b: float = 0.5
    dt: float = 7e-7
    label_transform: str = "gbct"
    thermo: tuple = ()
    input_stats: ZScore | None = field(default=None, compare=False)
    label_stats: ZScore | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.lambda_a > 0:
            raise ValueError("lambda_a must be > 0")
        if not self.lambda_b > 0:
            raise ValueError("lambda_b must be > 0")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.label_transform not in LABEL_TRANSFORMS:
            raise ValueError(f"label_transform must be one of {LABEL_TRANSFORMS}")
        object.__setattr__(self, "thermo", tuple(self.thermo))

    def with_stats(self, input_stats: ZScore | None, label_stats: ZScore | None) -> "TransformSpec":
        return replace(self, input_stats=input_stats, label_stats=label_stats)

    def g(self, u):
        return gbct(u, self.lambda_b) if self.label_transform == "gbct" else np.asarray(u, dtype=float)

    def g_inv(self, v):
        return gbct_inv(v, self.lambda_b) if self.label_transform == "gbct" else np.asarray(v, dtype=float)

    def to_dict(self) -> dict:
        return {
            "lambda_a": self.lambda_a,
            "lambda_b": self.lambda_b,
            "dt": self.dt,
            "label_transform": self.label_transform,
            "thermo": list(self.thermo),
            "input_stats": None if self.input_stats is None else self.input_stats.to_dict(),
            "label_stats": None if self.label_stats is None else self.label_stats.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransformSpec":
        return cls(
            lambda_a=float(d["lambda_a"]),
            lambda_b=float(d["lambda_b"]),
            dt=float(d["dt"]),
            label_transform=d["label_transform"],
            thermo=tuple(d.get("thermo", ())),
            input_stats=None if d.get("input_stats") is None else ZScore.from_dict(d["input_stats"]),
            label_stats=None if d.get("label_stats") is None else ZScore.from_dict(d["label_stats"]),
        )


def raw_inputs(Y, spec: TransformSpec, T=None, rho=None):
    """[T, rho, B(Y)] rows before Z-scoring; Y has shape (n, Ns)."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    cols = []
    for name, v in (("T", T), ("rho", rho)):
        if name in spec.thermo:
            if v is None:
                raise DimensionMismatch(f"transform expects {name} in the input")
            cols.append(np.broadcast_to(np.asarray(v, dtype=float), (Y.shape[0],))[:, None])
    cols.append(bct(np.clip(Y, 0.0, None), spec.lambda_a))
    return np.concatenate(cols, axis=1)


def scale_inputs(Y, spec: TransformSpec, T=None, rho=None):
    x = raw_inputs(Y, spec, T, rho)
    return x if spec.input_stats is None else zscore_apply(x, spec.input_stats)


def scale_input(s, spec: TransformSpec):
    """Network input vector for a single State."""
    return scale_inputs(s.Y[None, :], spec, s.T, s.rho)[0]


def box_cox_rates(Y_t, Y_next, spec: TransformSpec):
    """u_B = (B(Y_next) - B(Y_t)) / dt, rowwise."""
    Y_t = np.asarray(Y_t, dtype=float)
    Y_next = np.asarray(Y_next, dtype=float)
    if Y_t.shape != Y_next.shape:
        raise DimensionMismatch(f"shape mismatch {Y_t.shape} vs {Y_next.shape}")
    la = spec.lambda_a
    return (bct(np.clip(Y_next, 0, None), la) - bct(np.clip(Y_t, 0, None), la)) / spec.dt


def scale_label(Y_t, Y_next, spec: TransformSpec):
    """G(u_B), then label Z-score when fitted.  Works on vectors or row batches."""
    lab = spec.g(box_cox_rates(Y_t, Y_next, spec))
    return lab if spec.label_stats is None else zscore_apply(lab, spec.label_stats)


def unscale_prediction(pred, Y_t, spec: TransformSpec, renormalize: bool = False):
    """Invert the label map: network output -> Y_next.

    Undo Z-score, undo G, step in Box-Cox space, clamp at -1/lambda_a,
    invert B and clip to [0, 1]; optionally rescale rows to unit sum.
    """
    pred = np.asarray(pred, dtype=float)
    Y_t = np.asarray(Y_t, dtype=float)
    if pred.shape != Y_t.shape:
        raise DimensionMismatch(f"prediction shape {pred.shape} differs from state shape {Y_t.shape}")
    v = pred if spec.label_stats is None else zscore_inv(pred, spec.label_stats)
    u = spec.g_inv(v)
    z = bct(np.clip(Y_t, 0, None), spec.lambda_a) + spec.dt * u
    z = np.maximum(z, -1.0 / spec.lambda_a)
    Y = np.clip(bct_inv(z, spec.lambda_a), 0.0, 1.0)
    if renormalize:
        tot = Y.sum(axis=-1, keepdims=True)
        Y = np.where(tot > 0, Y / np.where(tot > 0, tot, 1.0), Y)
    return Y
