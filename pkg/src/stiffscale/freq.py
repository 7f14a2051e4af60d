"""Frequency content of a labelled dataset via Gaussian low-pass filtering.

The low-pass part of the labels at scale delta is a kernel-weighted average
over neighbouring inputs; LFR is its share of the label energy and RDF the
derivative of LFR along the cutoff k0 = 1/delta.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateGrid, DimensionMismatch, EmptyData, ZeroEnergy
from .transforms import zscore_apply, zscore_fit

ROW_BLOCK = 512


@dataclass(frozen=True)
class FreqConfig:
    k0_min: float = 1e-2
    k0_max: float = 1e2
    n_k0: int = 32
    cap: int = 4096
    seed: int = 0
    zscore_inputs: bool = True

    def __post_init__(self):
        if not 0 < self.k0_min < self.k0_max:
            raise ValueError("need 0 < k0_min < k0_max")
        if self.n_k0 < 2:
            raise ValueError("n_k0 must be >= 2")
        if self.cap < 2:
            raise ValueError("cap must be >= 2")

    def k0_grid(self) -> np.ndarray:
        return np.logspace(np.log10(self.k0_min), np.log10(self.k0_max), self.n_k0)

    def to_dict(self) -> dict:
        return asdict(self)


def _check(xs, ys):
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None]
    if ys.ndim == 1:
        ys = ys[:, None]
    if xs.shape[0] == 0:
        raise EmptyData("no samples")
    if xs.shape[0] != ys.shape[0]:
        raise DimensionMismatch(f"{xs.shape[0]} inputs vs {ys.shape[0]} labels")
    return xs, ys


def _sq_dists(xa, xb):
    d2 = (xa * xa).sum(1)[:, None] + (xb * xb).sum(1)[None, :] - 2.0 * xa @ xb.T
    return np.maximum(d2, 0.0)


def _lowpass_many(xs, ys, deltas):
    """Filtered labels for every delta, computed block-wise over rows."""
    n = xs.shape[0]
    out = np.empty((len(deltas),) + ys.shape)
    for lo in range(0, n, ROW_BLOCK):
        hi = min(lo + ROW_BLOCK, n)
        d2 = _sq_dists(xs[lo:hi], xs)
        # exact zero self-distance regardless of rounding in the expansion
        d2[np.arange(hi - lo), np.arange(lo, hi)] = 0.0
        for j, delta in enumerate(deltas):
            w = np.exp(-d2 / (2.0 * delta))
            out[j, lo:hi] = (w @ ys) / w.sum(axis=1, keepdims=True)
    return out


def lowpass(xs, ys, delta: float):
    """Gaussian-kernel (variance delta) average of labels; self term included."""
    if not delta > 0:
        raise ValueError("delta must be > 0")
    xs, ys = _check(xs, ys)
    return _lowpass_many(xs, ys, [delta])[0]


def _energy_ratio(ylow, ys):
    tot = float(np.sum(ys * ys))
    if tot == 0:
        raise ZeroEnergy("labels have zero energy")
    return float(np.sum(ylow * ylow)) / tot


def lfr(xs, ys, delta: float) -> float:
    xs, ys = _check(xs, ys)
    return _energy_ratio(lowpass(xs, ys, delta), ys)


def prepare(xs, ys, cfg: FreqConfig):
    """Fixed-seed uniform subsample to the cap, then Z-score the inputs."""
    xs, ys = _check(xs, ys)
    n = xs.shape[0]
    if n > cfg.cap:
        idx = np.sort(np.random.default_rng(cfg.seed).choice(n, cfg.cap, replace=False))
        xs, ys = xs[idx], ys[idx]
    if cfg.zscore_inputs and xs.shape[0] >= 2:
        xs = zscore_apply(xs, zscore_fit(xs))
    return xs, ys


def lfr_curve(xs, ys, cfg: FreqConfig = FreqConfig()):
    """[(k0, LFR)] over the ascending k0 grid, with delta = 1/k0."""
    xs, ys = prepare(xs, ys, cfg)
    k0 = cfg.k0_grid()
    if float(np.sum(ys * ys)) == 0:
        raise ZeroEnergy("labels have zero energy")
    low = _lowpass_many(xs, ys, 1.0 / k0)
    return [(float(k), _energy_ratio(low[j], ys)) for j, k in enumerate(k0)]


def rdf(curve):
    """dLFR/dk0 by central differences (one-sided at the ends).

    The stencil (L[i+1] - L[i-1]) / (k[i+1] - k[i-1]) makes trapezoid
    integration of the result telescope exactly to L[-1] - L[0].
    """
    k = np.array([c[0] for c in curve], dtype=float)
    L = np.array([c[1] for c in curve], dtype=float)
    if k.size < 2:
        raise DegenerateGrid("need at least 2 points")
    if np.any(np.diff(k) <= 0):
        raise DegenerateGrid("k0 grid must be strictly increasing")
    r = np.empty_like(L)
    r[0] = (L[1] - L[0]) / (k[1] - k[0])
    r[-1] = (L[-1] - L[-2]) / (k[-1] - k[-2])
    r[1:-1] = (L[2:] - L[:-2]) / (k[2:] - k[:-2])
    return list(zip(k.tolist(), r.tolist()))


def trapezoid(curve) -> float:
    k = np.array([c[0] for c in curve], dtype=float)
    v = np.array([c[1] for c in curve], dtype=float)
    return float(np.sum(0.5 * (v[1:] + v[:-1]) * np.diff(k)))


def rdf_centroid(rdf_curve, scale: str = "log") -> float:
    """k0 centroid of the RDF mass (negative wiggles count as zero mass).

    ``scale="log"`` averages log k0 (a geometric mean, matching the
    log-spaced grid); ``"linear"`` averages k0 itself, which the top decade
    of the grid dominates.
    """
    if scale not in ("log", "linear"):
        raise ValueError("scale must be 'log' or 'linear'")
    k = np.array([c[0] for c in rdf_curve], dtype=float)
    r = np.clip(np.array([c[1] for c in rdf_curve], dtype=float), 0.0, None)
    w = np.zeros_like(k)
    w[:-1] += 0.5 * np.diff(k)
    w[1:] += 0.5 * np.diff(k)
    mass = float(np.sum(w * r))
    if mass == 0:
        raise ZeroEnergy("RDF has no positive mass")
    if scale == "log":
        return float(np.exp(np.sum(w * r * np.log(k)) / mass))
    return float(np.sum(w * r * k)) / mass


def write_curve_csv(curve, rdf_curve, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k0", "lfr", "rdf"])
        for (k, l), (_, r) in zip(curve, rdf_curve):
            w.writerow([f"{k:.17g}", f"{l:.17g}", f"{r:.17g}"])
