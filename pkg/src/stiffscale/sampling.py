"""Training data: Monte-Carlo initial states plus short evolution bursts.

Each initial state gets its own RNG stream derived from (seed, index), and
the integrator treats rows independently, so the generated pairs depend only
on the configuration and never on chunking or worker count.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyData, InvalidRange
from .integrator import SolverConfig, advance
from .kinetics import ReactionNetwork, State
from .parallel import chunk_bounds, map_chunks
from .transforms import TransformSpec, raw_inputs, scale_label, zscore_apply, zscore_fit

CHUNK = 512


@dataclass(frozen=True)
class Range:
    lo: float
    hi: float
    scale: str = "log"  # "log" or "linear"

    def __post_init__(self):
        if self.scale not in ("log", "linear"):
            raise InvalidRange(f"unknown range scale {self.scale!r}")
        if not self.lo <= self.hi:
            raise InvalidRange(f"range bounds out of order: [{self.lo}, {self.hi}]")
        if self.scale == "log" and not self.lo > 0:
            raise InvalidRange(f"log-uniform bounds must be > 0, got [{self.lo}, {self.hi}]")

    def draw(self, rng: np.random.Generator, size=None):
        if self.scale == "log":
            return 10.0 ** rng.uniform(math.log10(self.lo), math.log10(self.hi), size)
        return rng.uniform(self.lo, self.hi, size)

    @classmethod
    def parse(cls, v) -> "Range":
        if isinstance(v, Range):
            return v
        if isinstance(v, dict):
            return cls(float(v["lo"]), float(v["hi"]), v.get("scale", "log"))
        lo, hi, *rest = v
        return cls(float(lo), float(hi), rest[0] if rest else "log")


@dataclass(frozen=True)
class SamplingConfig:
    n_initial: int = 2000
    y_ranges: tuple = ()
    T_range: Range | None = None
    rho_range: Range | None = None
    n_evolution_steps: int = 10
    evolution_dt: float = 7e-7
    seed: int = 0

    def __post_init__(self):
        if self.n_initial < 1:
            raise InvalidRange("n_initial must be >= 1")
        if self.n_evolution_steps < 0:
            raise InvalidRange("n_evolution_steps must be >= 0")
        if not self.evolution_dt > 0:
            raise InvalidRange("evolution_dt must be > 0")
        object.__setattr__(self, "y_ranges", tuple(Range.parse(r) for r in self.y_ranges))
        for name in ("T_range", "rho_range"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, Range.parse(v))

    def ranges_for(self, n_species: int):
        if len(self.y_ranges) == 1:
            return self.y_ranges * n_species
        if len(self.y_ranges) != n_species:
            raise InvalidRange(f"need 1 or {n_species} mass-fraction ranges, got {len(self.y_ranges)}")
        return self.y_ranges

    def to_dict(self) -> dict:
        d = asdict(self)
        d["y_ranges"] = [asdict(r) for r in self.y_ranges]
        return d


def rober_sampling(n_initial=2000, n_evolution_steps=10, seed=0, dt=7e-7) -> SamplingConfig:
    """Default ROBER coverage: y1 and y3 across ten decades, y2 (the fast
    intermediate) across [1e-14, 1e-2]."""
    return SamplingConfig(
        n_initial=n_initial,
        y_ranges=((1e-10, 1.0), (1e-14, 1e-2), (1e-10, 1.0)),
        n_evolution_steps=n_evolution_steps,
        evolution_dt=dt,
        seed=seed,
    )


def _rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, index])


def draw_raw(net: ReactionNetwork, cfg: SamplingConfig, index: int):
    """Un-normalized mass fractions (and T, rho) for initial state ``index``."""
    rng = _rng(cfg.seed, index)
    Y = np.array([r.draw(rng) for r in cfg.ranges_for(net.n_species)])
    T = rho = None
    if net.has_thermo_state:
        if cfg.T_range is None or cfg.rho_range is None:
            raise InvalidRange("thermo network needs T_range and rho_range")
        T = float(cfg.T_range.draw(rng))
        rho = float(cfg.rho_range.draw(rng))
    return Y, T, rho


def monte_carlo_states(net: ReactionNetwork, cfg: SamplingConfig) -> list:
    states = []
    for i in range(cfg.n_initial):
        Y, T, rho = draw_raw(net, cfg, i)
        if net.conserved_sum:
            Y = Y / Y.sum()
        states.append(State(Y, T, rho))
    return states


@dataclass
class Augmented:
    pairs: list
    n_skipped: int
    trajectory_index: list = field(default_factory=list)


def augment_by_evolution(states, net: ReactionNetwork, cfg: SamplingConfig,
                         solver_cfg: SolverConfig | None = None) -> Augmented:
    """Evolve each state for ``n_evolution_steps`` macro steps and emit the
    consecutive (x(t), x(t + dt)) pairs.  Trajectories whose integration
    fails are dropped whole and counted in ``n_skipped``."""
    if cfg.n_evolution_steps < 1:
        raise InvalidRange("n_evolution_steps must be >= 1 for augmentation")
    solver_cfg = solver_cfg or SolverConfig()
    n = len(states)
    if n == 0:
        return Augmented([], 0)
    Y0 = np.array([s.Y for s in states], dtype=float)
    T0 = None if states[0].T is None else np.array([s.T for s in states], dtype=float)
    rho0 = None if states[0].rho is None else np.array([s.rho for s in states], dtype=float)

    def run(lo, hi):
        Y = Y0[lo:hi]
        T = None if T0 is None else T0[lo:hi]
        rho = None if rho0 is None else rho0[lo:hi]
        hist_Y, hist_T = [Y], [T]
        bad = np.zeros(hi - lo, dtype=bool)
        for _ in range(cfg.n_evolution_steps):
            Y, Tn, failed = advance(net, Y, cfg.evolution_dt, solver_cfg, T, rho)
            bad |= failed | ~np.all(np.isfinite(Y), axis=1)
            T = Tn if T is not None else None
            hist_Y.append(Y)
            hist_T.append(T)
        return hist_Y, hist_T, bad

    results = map_chunks(run, n, CHUNK)
    pairs, traj_idx = [], []
    skipped = 0
    for (lo, _hi), (hist_Y, hist_T, bad) in zip(chunk_bounds(n, CHUNK), results):
        for r in range(bad.size):
            if bad[r]:
                skipped += 1
                continue
            i = lo + r
            rho = states[i].rho
            for k in range(cfg.n_evolution_steps):
                a = State(hist_Y[k][r].copy(), None if hist_T[k] is None else float(hist_T[k][r]), rho)
                b = State(hist_Y[k + 1][r].copy(), None if hist_T[k + 1] is None else float(hist_T[k + 1][r]), rho)
                pairs.append((a, b))
                traj_idx.append(i)
    return Augmented(pairs, skipped, traj_idx)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    spec: TransformSpec
    provenance: dict = field(default_factory=dict)
    raw: dict | None = None

    def __post_init__(self):
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs and labels must have equal row counts")

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, idx) -> "Dataset":
        raw = None if self.raw is None else {k: (None if v is None else v[idx]) for k, v in self.raw.items()}
        return Dataset(self.inputs[idx], self.labels[idx], self.spec, dict(self.provenance), raw)


def pairs_to_arrays(pairs):
    """Stack pairs into {"Y0", "Y1", "T0", "rho0"} arrays."""
    if not pairs:
        raise EmptyData("no pairs")
    Y0 = np.array([a.Y for a, _ in pairs], dtype=float)
    Y1 = np.array([b.Y for _, b in pairs], dtype=float)
    T0 = None if pairs[0][0].T is None else np.array([a.T for a, _ in pairs], dtype=float)
    rho0 = None if pairs[0][0].rho is None else np.array([a.rho for a, _ in pairs], dtype=float)
    T1 = None if pairs[0][1].T is None else np.array([b.T for _, b in pairs], dtype=float)
    return {"Y0": Y0, "Y1": Y1, "T0": T0, "rho0": rho0, "T1": T1}


def spec_fingerprint(spec: TransformSpec) -> str:
    return hashlib.sha256(json.dumps(spec.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def build_dataset(pairs, spec: TransformSpec, provenance: dict | None = None) -> Dataset:
    """Scale pairs into (input, label) rows and fit Z-score on the full set.

    ``pairs`` is a list of (State, State) or the dict from ``pairs_to_arrays``.
    """
    raw = pairs if isinstance(pairs, dict) else pairs_to_arrays(pairs)
    if raw["Y0"].shape[0] == 0:
        raise EmptyData("no pairs")
    bare = spec.with_stats(None, None)
    X = raw_inputs(raw["Y0"], bare, raw.get("T0"), raw.get("rho0"))
    L = scale_label(raw["Y0"], raw["Y1"], bare)
    if X.shape[0] >= 2:
        in_stats, lab_stats = zscore_fit(X), zscore_fit(L)
        X, L = zscore_apply(X, in_stats), zscore_apply(L, lab_stats)
    else:
        in_stats = lab_stats = None
    fitted = spec.with_stats(in_stats, lab_stats)
    prov = dict(provenance or {})
    prov["transform_spec"] = fitted.to_dict()
    prov["transform_fingerprint"] = spec_fingerprint(fitted)
    return Dataset(X, L, fitted, prov, raw)


def split(ds: Dataset, train_fraction: float = 0.9, seed: int = 0):
    """Deterministic shuffled split; the train part gets floor(fraction * n) rows."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    n = len(ds)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(math.floor(train_fraction * n))
    return ds.subset(np.sort(perm[:n_train])), ds.subset(np.sort(perm[n_train:]))


def _fmt(v) -> str:
    return f"{float(v):.17g}"


def save_dataset(ds: Dataset, path):
    """CSV ``in_0..,lab_0..`` plus a sidecar ``<stem>.json`` with provenance."""
    path = Path(path)
    d, m = ds.inputs.shape[1], ds.labels.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"in_{i}" for i in range(d)] + [f"lab_{j}" for j in range(m)])
        for x, y in zip(ds.inputs, ds.labels):
            w.writerow([_fmt(v) for v in x] + [_fmt(v) for v in y])
    path.with_suffix(".json").write_text(json.dumps(ds.provenance, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_dataset(path) -> Dataset:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
    d = sum(1 for h in header if h.startswith("in_"))
    prov = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    spec = TransformSpec.from_dict(prov["transform_spec"])
    return Dataset(body[:, :d], body[:, d:], spec, prov)


def save_pairs(raw: dict, names, path):
    """Raw (x(t), x(t+dt)) pairs, so labels can be rebuilt under either transform."""
    header, cols = [], []
    for key, label in (("T0", "T0"), ("rho0", "rho0"), ("T1", "T1")):
        if raw.get(key) is not None:
            header.append(label)
            cols.append(raw[key][:, None])
    header += [f"Y0_{n}" for n in names] + [f"Y1_{n}" for n in names]
    cols += [raw["Y0"], raw["Y1"]]
    data = np.concatenate(cols, axis=1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in data:
            w.writerow([_fmt(v) for v in row])


def load_pairs(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array(rows[1:], dtype=float).reshape(-1, len(header))
    out = {"T0": None, "rho0": None, "T1": None}
    for key in ("T0", "rho0", "T1"):
        if key in header:
            out[key] = data[:, header.index(key)]
    out["Y0"] = data[:, [i for i, h in enumerate(header) if h.startswith("Y0_")]]
    out["Y1"] = data[:, [i for i, h in enumerate(header) if h.startswith("Y1_")]]
    return out


def generate_pairs(net: ReactionNetwork, cfg: SamplingConfig, solver_cfg: SolverConfig | None = None) -> Augmented:
    """monte_carlo_states followed by augment_by_evolution."""
    return augment_by_evolution(monte_carlo_states(net, cfg), net, cfg, solver_cfg)
