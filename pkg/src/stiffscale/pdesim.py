"""Strang-split reaction-diffusion on uniform 1D/2D cell-centred grids.

Diffusion is explicit FTCS with automatic sub-stepping; reaction advances
every cell independently through a pluggable backend (the implicit solver,
a trained surrogate, or fixed-step RK4 for cross-checks).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, InvalidState, NonFiniteState, UnstableConfig
from .integrator import SolverConfig, advance
from .kinetics import ReactionNetwork
from .parallel import chunk_bounds, map_chunks

BOUNDARY_CONDITIONS = ("neumann", "periodic")
MAX_SUBSTEPS = 1_000_000
CELL_CHUNK = 512


@dataclass
class Grid:
    """Cell fields Y with shape (ny, nx, Ns) in 2D or (nx, Ns) in 1D."""

    Y: np.ndarray
    D: np.ndarray
    bounds: tuple = ((-1.0, 1.0), (-1.0, 1.0))
    bc: tuple = ("neumann", "neumann")
    T: np.ndarray | None = None
    rho: np.ndarray | None = None

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=float)
        self.D = np.asarray(self.D, dtype=float)
        if self.Y.ndim not in (2, 3):
            raise DimensionMismatch("Y must have shape (nx, Ns) or (ny, nx, Ns)")
        if any(n < 3 for n in self.Y.shape[:-1]):
            raise DimensionMismatch(f"grid needs >= 3 cells per axis, got {self.Y.shape[:-1]}")
        if self.D.shape != (self.n_species,):
            raise DimensionMismatch(f"need {self.n_species} diffusion coefficients, got {self.D.shape}")
        if np.any(self.D < 0):
            raise ValueError("diffusion coefficients must be >= 0")
        if isinstance(self.bc, str):
            self.bc = (self.bc,) * self.ndim
        self.bc = tuple(self.bc)[: self.ndim]
        if len(self.bc) != self.ndim or any(b not in BOUNDARY_CONDITIONS for b in self.bc):
            raise ValueError(f"boundary conditions must be one of {BOUNDARY_CONDITIONS} per axis")
        self.bounds = tuple(tuple(map(float, b)) for b in self.bounds)[: self.ndim]

    @property
    def ndim(self) -> int:
        return self.Y.ndim - 1

    @property
    def shape(self) -> tuple:
        return self.Y.shape[:-1]

    @property
    def n_species(self) -> int:
        return self.Y.shape[-1]

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    def spacing(self) -> tuple:
        # axis order follows the array: (dy, dx) in 2D, (dx,) in 1D
        n_axes = self.shape
        b = self.bounds[::-1] if self.ndim == 2 else self.bounds
        return tuple((hi - lo) / n for (lo, hi), n in zip(b, n_axes))

    def centers(self):
        """Cell-centre coordinates; (X, Y) mesh arrays in 2D, x in 1D."""
        axes = []
        for (lo, hi), n in zip(self.bounds, self.shape[::-1]):
            h = (hi - lo) / n
            axes.append(lo + h * (np.arange(n) + 0.5))
        if self.ndim == 1:
            return axes[0]
        return np.meshgrid(axes[0], axes[1], indexing="xy")

    def copy(self) -> "Grid":
        return replace(self, Y=self.Y.copy(),
                       T=None if self.T is None else self.T.copy(),
                       rho=None if self.rho is None else self.rho.copy())

    def with_Y(self, Y, T=None) -> "Grid":
        g = replace(self, Y=Y)
        if T is not None:
            g.T = T
        return g

    def validate(self, sum_tol: float | None = None, y_tol: float = 1e-12):
        if not np.all(np.isfinite(self.Y)):
            raise InvalidState("non-finite cell state")
        if self.Y.min() < -y_tol or self.Y.max() > 1 + y_tol:
            raise InvalidState(f"mass fractions outside [0, 1]: [{self.Y.min()}, {self.Y.max()}]")
        if sum_tol is not None:
            dev = np.abs(self.Y.sum(axis=-1) - 1.0).max()
            if dev > sum_tol:
                raise InvalidState(f"cell mass-fraction sum deviates by {dev:.3g}")


def init_rober_gaussian(nx: int = 64, ny: int = 64, D=(100.0, 0.5, 2.0), bc="neumann",
                        bounds=((-1.0, 1.0), (-1.0, 1.0)), A1=1.0, sigma1=0.25, A2=1e-4, sigma2=0.3) -> Grid:
    """y1: four Gaussians at (+-0.5, +-0.5); y2: one at the origin; y3 = 1 - y1 - y2;
    then clip to [0, 1] and rescale each cell to unit sum."""
    g = Grid(np.zeros((ny, nx, 3)), D, bounds, bc)
    X, Yc = g.centers()

    def bump(cx, cy, s):
        return np.exp(-((X - cx) ** 2 + (Yc - cy) ** 2) / (2.0 * s * s))

    y1 = A1 * sum(bump(cx, cy, sigma1) for cx, cy in ((-0.5, 0.5), (-0.5, -0.5), (0.5, -0.5), (0.5, 0.5)))
    y2 = A2 * bump(0.0, 0.0, sigma2)
    Y = np.clip(np.stack([y1, y2, 1.0 - y1 - y2], axis=-1), 0.0, 1.0)
    g.Y = Y / Y.sum(axis=-1, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# diffusion
# ---------------------------------------------------------------------------

def _stencil_rate(g: Grid) -> float:
    return sum(1.0 / h ** 2 for h in g.spacing())


def diffusion_substeps(g: Grid, dt: float, safety: float = 1.0) -> np.ndarray:
    """Per-species FTCS substep count with D*dt_sub*sum(1/h^2) <= 0.25*safety."""
    if not 0 < safety <= 1:
        raise ValueError("safety factor must lie in (0, 1]")
    need = g.D * dt * _stencil_rate(g) / (0.25 * safety)
    return np.maximum(1, np.ceil(need - 1e-12)).astype(np.int64)


def _laplacian(u, g: Grid):
    out = np.zeros_like(u)
    for axis, (h, bc) in enumerate(zip(g.spacing(), g.bc)):
        if bc == "periodic":
            up, dn = np.roll(u, -1, axis), np.roll(u, 1, axis)
        else:
            # edge padding = mirrored ghost cell = zero flux through the wall
            pad = [(0, 0)] * u.ndim
            pad[axis] = (1, 1)
            p = np.pad(u, pad, mode="edge")
            up = np.take(p, np.arange(2, u.shape[axis] + 2), axis=axis)
            dn = np.take(p, np.arange(0, u.shape[axis]), axis=axis)
        out += ((up - u) - (u - dn)) / (h * h)
    return out


def diffusion_step(g: Grid, dt: float, safety: float = 1.0, n_substeps=None) -> Grid:
    """Explicit FTCS diffusion of every species over dt.

    ``n_substeps`` (scalar or per species) overrides the automatic count;
    it may not go below the stability requirement.
    """
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if dt == 0:
        return g.copy()
    need = diffusion_substeps(g, dt, safety)
    if n_substeps is not None:
        n = np.broadcast_to(np.asarray(n_substeps, dtype=np.int64), need.shape)
        if np.any(n < need):
            raise UnstableConfig(f"{n.tolist()} substeps below the stability requirement {need.tolist()}")
        need = n
    if need.max() > MAX_SUBSTEPS:
        raise UnstableConfig(f"diffusion needs {int(need.max())} substeps (cap {MAX_SUBSTEPS})")
    Y = g.Y.copy()
    for s in range(g.n_species):
        if g.D[s] == 0:
            continue
        u = Y[..., s].copy()
        h = dt / need[s]
        for _ in range(int(need[s])):
            u = u + (h * g.D[s]) * _laplacian(u, g)
        Y[..., s] = u
    return g.with_Y(Y)


# ---------------------------------------------------------------------------
# reaction backends
# ---------------------------------------------------------------------------

class DirectBackend:
    """Implicit Rosenbrock integration per cell."""

    name = "direct"

    def __init__(self, net: ReactionNetwork, solver_cfg: SolverConfig | None = None):
        self.net = net
        self.solver_cfg = solver_cfg or SolverConfig()

    def react(self, Y, T, rho, dt):
        n = Y.shape[0]

        def run(lo, hi):
            return advance(self.net, Y[lo:hi], dt, self.solver_cfg,
                           None if T is None else T[lo:hi], None if rho is None else rho[lo:hi])

        parts = map_chunks(run, n, CELL_CHUNK)
        Yn = np.concatenate([p[0] for p in parts])
        Tn = None if T is None else np.concatenate([p[1] for p in parts])
        failed = np.concatenate([p[2] for p in parts])
        return Yn, Tn, failed


class SurrogateBackend:
    """Trained network as the reaction operator; dt must equal the model's macro step."""

    name = "surrogate"

    def __init__(self, model, spec, net: ReactionNetwork):
        self.model, self.spec, self.net = model, spec, net

    def react(self, Y, T, rho, dt):
        from .surrogate import predict_batch

        if not math.isclose(dt, self.spec.dt, rel_tol=1e-12):
            raise ValueError(f"surrogate trained for dt={self.spec.dt}, asked for {dt}")
        Yn, Tn = predict_batch(self.model, self.spec, self.net, Y, T, rho)
        return Yn, Tn, ~np.all(np.isfinite(Yn), axis=1)


class RK4Backend:
    """Fixed-step classical RK4 per cell (non-stiff cross-check only)."""

    name = "rk4"

    def __init__(self, net: ReactionNetwork, n_substeps: int = 100):
        self.net, self.n_substeps = net, int(n_substeps)

    def react(self, Y, T, rho, dt):
        h = dt / self.n_substeps
        f = lambda y: self.net.source(y, T, rho)
        with np.errstate(all="ignore"):
            for _ in range(self.n_substeps):
                k1 = f(Y)
                k2 = f(Y + 0.5 * h * k1)
                k3 = f(Y + 0.5 * h * k2)
                k4 = f(Y + h * k3)
                Y = Y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        return Y, T, ~np.all(np.isfinite(Y), axis=1)


def reaction_step(g: Grid, dt: float, backend) -> Grid:
    """Advance every cell's chemistry over dt; a failed cell aborts with its index."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if dt == 0:
        return g.copy()
    flat = g.Y.reshape(-1, g.n_species)
    T = None if g.T is None else g.T.reshape(-1)
    rho = None if g.rho is None else g.rho.reshape(-1)
    Yn, Tn, failed = backend.react(flat, T, rho, dt)
    if np.any(failed):
        first = np.unravel_index(int(np.argmax(failed)), g.shape)
        raise NonFiniteState(f"{backend.name} reaction failed in {int(failed.sum())} cells, first at {tuple(map(int, first))}")
    return g.with_Y(Yn.reshape(g.Y.shape), None if Tn is None else np.asarray(Tn).reshape(g.shape))


def normalize_cells(g: Grid) -> Grid:
    """Clip to [0, 1] and rescale each cell to unit sum."""
    Y = np.clip(g.Y, 0.0, 1.0)
    tot = Y.sum(axis=-1, keepdims=True)
    return g.with_Y(np.where(tot > 0, Y / np.where(tot > 0, tot, 1.0), Y))


def strang_step(g: Grid, dt: float, backend, safety: float = 1.0, normalize: bool = False) -> Grid:
    """diffusion(dt/2), reaction(dt), diffusion(dt/2); optional per-cell renormalisation."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    g = diffusion_step(g, 0.5 * dt, safety)
    g = reaction_step(g, dt, backend)
    g = diffusion_step(g, 0.5 * dt, safety)
    return normalize_cells(g) if normalize else g


# ---------------------------------------------------------------------------
# driver and metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    dt: float = 7e-7
    n_steps: int = 1000
    backend: str = "direct"
    checkpoint: str | None = None
    safety: float = 1.0
    snapshot_every: int = 100
    normalize: bool = True
    rel_floor: float = 1e-12

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")
        if self.backend not in ("direct", "surrogate", "rk4"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.backend == "surrogate" and not self.checkpoint:
            raise ValueError("surrogate backend needs a checkpoint path")


@dataclass
class SimResult:
    times: list
    steps: list
    snapshots: list  # Y arrays shaped like Grid.Y
    metrics: list = field(default_factory=list)
    final: Grid | None = None


def domain_avg_rel_error(a, b, floor: float = 1e-12) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shape mismatch {a.shape} vs {b.shape}")
    if not floor > 0:
        raise ValueError("floor must be > 0")
    return float(np.mean(np.abs(a - b) / np.maximum(np.abs(b), floor)))


def field_metrics(Y, Y_ref, floor: float = 1e-12) -> dict:
    Y, Y_ref = np.asarray(Y), np.asarray(Y_ref)
    ns = Y.shape[-1]
    return {
        "max_abs": [float(np.abs(Y[..., s] - Y_ref[..., s]).max()) for s in range(ns)],
        "domain_avg_rel": [domain_avg_rel_error(Y[..., s], Y_ref[..., s], floor) for s in range(ns)],
    }


def run_simulation(g0: Grid, cfg: SimConfig, backend, reference: SimResult | None = None,
                   normalize: bool | None = None, progress=None) -> SimResult:
    """n_steps Strang steps with snapshots every ``snapshot_every`` steps (and
    at the end).  With a reference run on the same cadence, per-snapshot
    max-abs and domain-averaged relative errors are recorded."""
    norm = cfg.normalize if normalize is None else normalize
    g = g0.copy()
    res = SimResult([0.0], [0], [g.Y.copy()])
    for k in range(1, cfg.n_steps + 1):
        g = strang_step(g, cfg.dt, backend, cfg.safety, norm)
        if k % cfg.snapshot_every == 0 or k == cfg.n_steps:
            res.times.append(k * cfg.dt)
            res.steps.append(k)
            res.snapshots.append(g.Y.copy())
        if progress is not None:
            progress(k)
    res.final = g
    if reference is not None:
        res.metrics = compare_results(res, reference, cfg.rel_floor)
    return res


def compare_results(res: SimResult, ref: SimResult, floor: float = 1e-12) -> list:
    if res.steps != ref.steps:
        raise DimensionMismatch("runs have different snapshot steps")
    out = []
    for k, t, Y, Yr in zip(res.steps, res.times, res.snapshots, ref.snapshots):
        m = field_metrics(Y, Yr, floor)
        m.update(step=k, t=t)
        out.append(m)
    return out


def _write_field(path: Path, a):
    a = np.atleast_2d(a)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in a:
            w.writerow([f"{float(v):.17g}" for v in row])


def export_snapshots(res: SimResult, g: Grid, names, out_dir, prefix="snap", config: dict | None = None,
                     reference: SimResult | None = None) -> Path:
    """One CSV per (snapshot, species), rows in row-major cell order, plus an
    index JSON.  With a reference run, |Y - Y_ref| fields are exported too."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files, err_files = [], []
    for i, Y in enumerate(res.snapshots):
        row, erow = {}, {}
        for s, name in enumerate(names):
            fn = f"{prefix}_{i:04d}_{name}.csv"
            _write_field(out / fn, Y[..., s])
            row[name] = fn
            if reference is not None:
                efn = f"{prefix}_err_{i:04d}_{name}.csv"
                _write_field(out / efn, np.abs(Y[..., s] - reference.snapshots[i][..., s]))
                erow[name] = efn
        files.append(row)
        err_files.append(erow)
    index = {
        "grid": {"shape": list(g.shape), "bounds": [list(b) for b in g.bounds], "bc": list(g.bc),
                 "D": [float(d) for d in g.D]},
        "species": list(names),
        "steps": list(res.steps),
        "times": [float(t) for t in res.times],
        "files": files,
        "config": config or {},
    }
    if reference is not None:
        index["error_files"] = err_files
        index["metrics"] = res.metrics
    path = out / f"{prefix}_index.json"
    path.write_text(json.dumps(index, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path
