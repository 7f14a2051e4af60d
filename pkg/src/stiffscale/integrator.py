"""Stiff time integration of reaction networks.

The workhorse is a linearly implicit Rosenbrock 2(3) pair (the L-stable
formula of Shampine & Reichelt, as in MATLAB's ode23s) with an embedded
third-order error estimate.  It runs on a *batch* of independent states:
every row carries its own time, step size and accept/reject history, so a
row's result does not depend on which other rows share the batch.  The same
kernel drives single trajectories, macro-step propagation, dataset
augmentation and per-cell reaction updates on a grid.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionMismatch, NewtonDivergence, NonFiniteState
from .kinetics import ReactionNetwork, State, temperature_rate

SOLVER_NAME = "rosenbrock23-ode23s"

_D = 1.0 / (2.0 + math.sqrt(2.0))
_E32 = 6.0 + math.sqrt(2.0)


@dataclass(frozen=True)
class SolverConfig:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-14
    # Rosenbrock stages are linear solves, so there is no Newton loop; this
    # caps consecutive rejected step attempts before the row is declared failed.
    max_newton_iters: int = 25
    initial_step: float = 1e-6
    max_step: float = math.inf
    max_steps: int = 1_000_000

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be > 0")
        if self.max_newton_iters < 1:
            raise ValueError("max_newton_iters must be >= 1")
        if not (self.initial_step > 0 and self.max_step > 0):
            raise ValueError("step sizes must be > 0")


@dataclass
class Trajectory:
    times: list
    states: list
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    def Y(self) -> np.ndarray:
        return np.array([s.Y for s in self.states])

    def T(self) -> np.ndarray | None:
        if not self.states or self.states[0].T is None:
            return None
        return np.array([s.T for s in self.states])

    def final(self) -> State:
        return self.states[-1]


# ---------------------------------------------------------------------------
# batched right-hand side
# ---------------------------------------------------------------------------

class _System:
    """dz/dt for z = [T, Y] (temperature evolving) or z = Y."""

    def __init__(self, net: ReactionNetwork, T=None, rho=None):
        self.net = net
        self.rho = rho
        self.evolve_T = net.has_thermo_state and net.thermo is not None and T is not None
        self.T = T
        self.offset = 1 if self.evolve_T else 0

    def pack(self, Y, T=None):
        if self.evolve_T:
            return np.concatenate([np.asarray(T, dtype=float)[:, None], Y], axis=1)
        return np.array(Y, dtype=float)

    def unpack(self, z):
        if self.evolve_T:
            return z[:, 1:], z[:, 0]
        return z, self.T

    def _split(self, z, rows):
        rho = None if self.rho is None else self.rho[rows]
        if self.evolve_T:
            return z[:, 1:], z[:, 0], rho
        T = None if self.T is None else self.T[rows]
        return z, T, rho

    def f(self, z, rows):
        Y, T, rho = self._split(z, rows)
        with np.errstate(all="ignore"):
            dY = self.net.source(Y, T, rho)
            if not self.evolve_T:
                return dY
            return np.concatenate([temperature_rate(self.net.thermo, dY)[:, None], dY], axis=1)

    def jac(self, z, rows):
        Y, T, rho = self._split(z, rows)
        with np.errstate(all="ignore"):
            JY = self.net.source_jacobian(Y, T, rho)
            if not self.evolve_T:
                return JY
            hT = 1e-7 * np.abs(T) + 1e-12
            dYdT = (self.net.source(Y, T + hT, rho) - self.net.source(Y, T - hT, rho)) / (2 * hT)[:, None]
            n, ns = Y.shape
            J = np.empty((n, ns + 1, ns + 1))
            J[:, 1:, 0] = dYdT
            J[:, 1:, 1:] = JY
            h = np.asarray(self.net.thermo.enthalpies)
            J[:, 0, :] = -np.einsum("k,nkj->nj", h, J[:, 1:, :]) / self.net.thermo.cp
            return J

    def clip(self, z):
        """Project mass fractions to >= 0; with a conserved sum the removed
        negative mass is taken proportionally from the positive entries."""
        Y = z[:, self.offset:]
        neg = (Y < 0).any(axis=1)
        if not neg.any():
            return z
        z = z.copy()
        Yn = Y[neg]
        total = Yn.sum(axis=1)
        Yc = np.maximum(Yn, 0.0)
        if self.net.conserved_sum:
            pos = Yc.sum(axis=1)
            scale = np.where(pos > 0, total / np.where(pos > 0, pos, 1.0), 1.0)
            Yc = Yc * scale[:, None]
        z[neg, self.offset:] = Yc
        return z


def _matvec(A, x):
    return np.einsum("nij,nj->ni", A, x)


def _rosenbrock(system: _System, z0, t_end, cfg: SolverConfig, record=None):
    """Advance every row of z0 to its own t_end.

    Returns (z, failed, n_accepted, n_rejected); ``record`` (optional list)
    receives (t, z_row0) after each accepted step of row 0.
    """
    z = np.array(z0, dtype=float)
    n, d = z.shape
    t_end = np.broadcast_to(np.asarray(t_end, dtype=float), (n,)).copy()
    t = np.zeros(n)
    h = np.minimum(np.full(n, cfg.initial_step), cfg.max_step)
    failed = np.zeros(n, dtype=bool)
    done = t_end <= 0
    rejects = np.zeros(n, dtype=int)
    n_acc = np.zeros(n, dtype=int)
    n_rej = np.zeros(n, dtype=int)
    eye = np.eye(d)
    rtol, atol = cfg.rel_tol, cfg.abs_tol

    while True:
        rows = np.flatnonzero(~done & ~failed)
        if rows.size == 0:
            break
        remaining = t_end[rows] - t[rows]
        hh = h[rows]
        last = hh * 1.0001 >= remaining
        hh = np.where(last, remaining, hh)
        y = z[rows]

        with np.errstate(all="ignore"):
            F0 = system.f(y, rows)
            J = system.jac(y, rows)
            W = eye - (hh * _D)[:, None, None] * J
            bad_w = ~np.all(np.isfinite(W), axis=(1, 2))
            W[bad_w] = eye
            try:
                Winv = np.linalg.inv(W)
            except np.linalg.LinAlgError:
                Winv = np.linalg.pinv(W)
            hc = hh[:, None]
            k1 = _matvec(Winv, F0)
            F1 = system.f(y + 0.5 * hc * k1, rows)
            k2 = _matvec(Winv, F1 - k1) + k1
            ynew = y + hc * k2
            F2 = system.f(ynew, rows)
            k3 = _matvec(Winv, F2 - _E32 * (k2 - F1) - 2.0 * (k1 - F0))
            err = hc / 6.0 * (k1 - 2.0 * k2 + k3)
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(ynew))
            enorm = np.sqrt(np.mean((err / scale) ** 2, axis=1))

        finite = np.isfinite(enorm) & np.all(np.isfinite(ynew), axis=1) & ~bad_w
        accept = finite & (enorm <= 1.0)

        with np.errstate(divide="ignore"):
            fac = 0.9 * np.where(enorm > 0, enorm, 1e-10) ** (-1.0 / 3.0)
        fac = np.where(accept, np.clip(fac, 0.2, 5.0), np.clip(fac, 0.1, 0.9))
        fac = np.where(finite, fac, 0.25)
        h[rows] = np.minimum(hh * fac, cfg.max_step)

        acc_rows = rows[accept]
        if acc_rows.size:
            znew = system.clip(ynew[accept])
            z[acc_rows] = znew
            t_new = t[acc_rows] + hh[accept]
            t[acc_rows] = np.where(last[accept], t_end[acc_rows], t_new)
            done[acc_rows] = t[acc_rows] >= t_end[acc_rows]
            rejects[acc_rows] = 0
            n_acc[acc_rows] += 1
            if record is not None and acc_rows[0] == 0:
                record.append((t[0], z[0].copy()))
        rej_rows = rows[~accept]
        if rej_rows.size:
            rejects[rej_rows] += 1
            n_rej[rej_rows] += 1
            tiny = h[rej_rows] <= 1e-14 * np.maximum(np.abs(t[rej_rows]), t_end[rej_rows])
            failed[rej_rows[(rejects[rej_rows] > cfg.max_newton_iters) | tiny]] = True
        failed |= (n_acc + n_rej) > cfg.max_steps

    return z, failed, n_acc, n_rej


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def _row_arrays(net, states):
    Y = np.array([s.Y for s in states], dtype=float)
    if Y.ndim != 2 or Y.shape[1] != net.n_species:
        raise DimensionMismatch(f"expected {net.n_species} mass fractions per state")
    T = None if states[0].T is None else np.array([s.T for s in states], dtype=float)
    rho = None if states[0].rho is None else np.array([s.rho for s in states], dtype=float)
    return Y, T, rho


def advance(net: ReactionNetwork, Y, dt, cfg: SolverConfig | None = None, T=None, rho=None):
    """Advance a batch of states by ``dt`` (scalar or per row).

    Y has shape (n, n_species); T and rho are per-row arrays or None.
    Returns (Y_new, T_new, failed_mask).  Failed rows are left at their
    last accepted state; nothing is raised.
    """
    cfg = cfg or SolverConfig()
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n = Y.shape[0]
    if Y.shape[1] != net.n_species:
        raise DimensionMismatch(f"expected {net.n_species} mass fractions, got {Y.shape[1]}")
    T = None if T is None else np.broadcast_to(np.asarray(T, dtype=float), (n,)).copy()
    rho = None if rho is None else np.broadcast_to(np.asarray(rho, dtype=float), (n,)).copy()
    system = _System(net, T, rho)
    z, failed, _, _ = _rosenbrock(system, system.pack(Y, T), dt, cfg)
    Yn, Tn = system.unpack(z)
    return Yn, (None if Tn is None else np.asarray(Tn)), failed


def integrate_implicit(net: ReactionNetwork, s0: State, t_end: float, cfg: SolverConfig | None = None) -> Trajectory:
    """Adaptive Rosenbrock integration of one state from 0 to ``t_end``.

    Every accepted step is recorded; the last time equals ``t_end`` exactly.
    """
    cfg = cfg or SolverConfig()
    if not t_end > 0:
        raise ValueError("t_end must be > 0")
    Y, T, rho = _row_arrays(net, [s0])
    system = _System(net, T, rho)
    record = [(0.0, system.pack(Y, T)[0])]
    z, failed, n_acc, n_rej = _rosenbrock(system, system.pack(Y, T), t_end, cfg, record=record)
    if failed[0]:
        last = record[-1][1]
        if not np.all(np.isfinite(last)):
            raise NonFiniteState(f"non-finite state at t={record[-1][0]:.6g}")
        raise NewtonDivergence(f"step size collapsed at t={record[-1][0]:.6g} (target {t_end:g})")
    times, states = [], []
    for tk, zk in record:
        Yk, Tk = system.unpack(zk[None, :])
        times.append(float(tk))
        states.append(State(Yk[0].copy(), None if Tk is None else float(Tk[0]), s0.rho))
    meta = {"solver": SOLVER_NAME, **asdict(cfg), "n_accepted": int(n_acc[0]), "n_rejected": int(n_rej[0])}
    return Trajectory(times, states, meta)


def step_fixed(net: ReactionNetwork, s: State, dt: float, cfg: SolverConfig | None = None) -> State:
    """x(t + dt): the exact propagation operator over one macro step."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if dt == 0:
        return s.copy()
    Y, T, rho = _row_arrays(net, [s])
    Yn, Tn, failed = advance(net, Y, dt, cfg, T, rho)
    if failed[0]:
        if not np.all(np.isfinite(Yn)):
            raise NonFiniteState("non-finite state during fixed step")
        raise NewtonDivergence(f"could not advance state by dt={dt:g}")
    return State(Yn[0], None if Tn is None else float(Tn[0]), s.rho)


def propagate(net: ReactionNetwork, s0: State, dt: float, n_steps: int, cfg: SolverConfig | None = None) -> Trajectory:
    """n_steps repeated macro steps of step_fixed; times are k * dt."""
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    states = [s0.copy()]
    s = s0
    for _ in range(n_steps):
        s = step_fixed(net, s, dt, cfg)
        states.append(s)
    return Trajectory([k * dt for k in range(n_steps + 1)], states, {"solver": SOLVER_NAME, "macro_dt": dt})


def integrate_rk4(net: ReactionNetwork, s0: State, t_end: float, n_steps: int) -> Trajectory:
    """Classical fixed-step RK4; unstable on stiff problems with large steps."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    Y, T, rho = _row_arrays(net, [s0])
    system = _System(net, T, rho)
    z = system.pack(Y, T)
    rows = np.array([0])
    h = t_end / n_steps
    times = [0.0]
    zs = [z[0].copy()]
    for i in range(n_steps):
        with np.errstate(all="ignore"):
            k1 = system.f(z, rows)
            k2 = system.f(z + 0.5 * h * k1, rows)
            k3 = system.f(z + 0.5 * h * k2, rows)
            k4 = system.f(z + h * k3, rows)
            z = z + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(z)):
            raise NonFiniteState(f"RK4 blew up at step {i + 1} (h={h:g}); problem too stiff for this step")
        times.append((i + 1) * h)
        zs.append(z[0].copy())
    states = []
    for zk in zs:
        Yk, Tk = system.unpack(zk[None, :])
        states.append(State(Yk[0].copy(), None if Tk is None else float(Tk[0]), s0.rho))
    return Trajectory(times, states, {"solver": "rk4", "n_steps": n_steps})


def write_trajectory_csv(traj: Trajectory, net: ReactionNetwork, path):
    """CSV with header t,T,rho,Y_<name>...; absent columns are omitted."""
    first = traj.states[0]
    header = ["t"]
    if first.T is not None:
        header.append("T")
    if first.rho is not None:
        header.append("rho")
    header += [f"Y_{n}" for n in net.species_names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t, s in zip(traj.times, traj.states):
            row = [t]
            if first.T is not None:
                row.append(s.T)
            if first.rho is not None:
                row.append(s.rho)
            row += list(s.Y)
            w.writerow([f"{float(v):.17g}" for v in row])
