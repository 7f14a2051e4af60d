"""Reaction networks with mass-action kinetics.

Rates follow the mass-fraction form of mass action,

    dY_i/dt = sum_r (beta_ri - alpha_ri) * (M_i / rho) * k_r * prod_k (rho*Y_k/M_k)**alpha_rk

with rho and M taken as 1 when a network carries no thermodynamic state.
All evaluation kernels broadcast over leading batch dimensions so that a
whole grid of cells can be advanced in one call.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidNetwork,
    InvalidState,
    MissingThermo,
    NonFiniteRate,
    NonPositiveTemperature,
)

GAS_CONSTANT = 8.314  # J/(mol K)
STIFFNESS_FLOOR = 1e-30


# ---------------------------------------------------------------------------
# rate laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Constant:
    k: float

    def __post_init__(self):
        if not self.k >= 0:
            raise InvalidNetwork(f"constant rate must be >= 0, got {self.k}")

    temperature_dependent = False

    def __call__(self, T=None):
        if T is None:
            return self.k
        return np.full(np.shape(T), self.k) if np.ndim(T) else self.k


@dataclass(frozen=True)
class Arrhenius:
    A: float
    Ea: float  # J/mol

    def __post_init__(self):
        if not self.A > 0:
            raise InvalidNetwork(f"Arrhenius pre-exponential must be > 0, got {self.A}")

    temperature_dependent = True

    def __call__(self, T):
        return self.A * np.exp(-self.Ea / (GAS_CONSTANT * np.asarray(T, dtype=float)))


@dataclass(frozen=True)
class ReaclibFit:
    """Seven-coefficient nuclear rate fit in T9 = T / 1e9 K."""

    a: tuple

    def __post_init__(self):
        if len(self.a) != 7:
            raise InvalidNetwork(f"ReaclibFit needs 7 coefficients, got {len(self.a)}")
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))

    temperature_dependent = True

    def __call__(self, T):
        t9 = np.asarray(T, dtype=float) / 1e9
        a = self.a
        expo = a[0] + a[6] * np.log(t9)
        for i in range(1, 6):
            expo = expo + a[i] * t9 ** ((2 * i - 5) / 3.0)
        return np.exp(expo)


RateLaw = Union[Constant, Arrhenius, ReaclibFit]


def rate_constant(law: RateLaw, T=None):
    """Evaluate the forward rate constant of ``law`` at temperature ``T`` (K)."""
    if law.temperature_dependent:
        if T is None or np.any(np.asarray(T) <= 0):
            raise NonPositiveTemperature(f"temperature must be > 0 for {type(law).__name__}, got {T}")
        return law(T)
    return law(T)


# ---------------------------------------------------------------------------
# network definition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Reaction:
    reactants: Mapping[int, float]
    products: Mapping[int, float]
    rate: RateLaw

    def __post_init__(self):
        if not self.reactants:
            raise InvalidNetwork("reaction needs at least one reactant")
        for coeffs in (self.reactants, self.products):
            for idx, c in coeffs.items():
                if not (math.isfinite(c) and c >= 0):
                    raise InvalidNetwork(f"stoichiometric coefficient for species {idx} must be finite and >= 0, got {c}")


@dataclass(frozen=True)
class ThermoModel:
    cp: float  # J/(g K)
    enthalpies: tuple  # formation enthalpy per species, J/g

    def __post_init__(self):
        if not self.cp > 0:
            raise InvalidNetwork(f"cp must be > 0, got {self.cp}")
        object.__setattr__(self, "enthalpies", tuple(float(h) for h in self.enthalpies))


@dataclass
class State:
    """A reactor state: optional temperature/density plus mass fractions."""

    Y: np.ndarray
    T: float | None = None
    rho: float | None = None

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=float)

    def copy(self) -> "State":
        return State(self.Y.copy(), self.T, self.rho)

    def validate(self, net: "ReactionNetwork", sum_tol: float | None = None, y_tol: float = 1e-12):
        if self.Y.shape != (net.n_species,):
            raise DimensionMismatch(f"expected {net.n_species} mass fractions, got shape {self.Y.shape}")
        if not np.all(np.isfinite(self.Y)):
            raise InvalidState("non-finite mass fraction")
        if np.any(self.Y < -y_tol) or np.any(self.Y > 1 + y_tol):
            raise InvalidState(f"mass fractions outside [0, 1]: {self.Y}")
        if net.conserved_sum:
            tol = net.sum_tol if sum_tol is None else sum_tol
            if abs(self.Y.sum() - 1.0) > tol:
                raise InvalidState(f"|sum(Y) - 1| = {abs(self.Y.sum() - 1.0):.3e} exceeds {tol:g}")
        for name in ("T", "rho"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise InvalidState(f"{name} must be > 0, got {v}")
        if net.has_thermo_state and (self.T is None or self.rho is None):
            raise InvalidState("thermo network requires T and rho")


@dataclass
class ReactionNetwork:
    species_names: list
    reactions: list
    molecular_weights: list | None = None
    has_thermo_state: bool = False
    conserved_sum: bool = False
    sum_tol: float = 1e-9
    thermo: ThermoModel | None = None
    _arrays: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ns = len(self.species_names)
        if ns < 1:
            raise InvalidNetwork("network needs at least one species")
        if len(set(self.species_names)) != ns:
            raise InvalidNetwork("duplicate species names")
        if self.molecular_weights is None:
            self.molecular_weights = [1.0] * ns
        self.molecular_weights = [float(m) for m in self.molecular_weights]
        if len(self.molecular_weights) != ns:
            raise InvalidNetwork("molecular_weights length differs from species count")
        if any(not m > 0 for m in self.molecular_weights):
            raise InvalidNetwork("molecular weights must be > 0")
        if self.thermo is not None and len(self.thermo.enthalpies) != ns:
            raise InvalidNetwork("thermo enthalpies length differs from species count")

        nr = len(self.reactions)
        alpha = np.zeros((nr, ns))
        beta = np.zeros((nr, ns))
        for r, rxn in enumerate(self.reactions):
            for target, coeffs in ((alpha, rxn.reactants), (beta, rxn.products)):
                for idx, c in coeffs.items():
                    if not 0 <= idx < ns:
                        raise InvalidNetwork(f"reaction {r}: species index {idx} out of range")
                    target[r, idx] += c
        self._arrays = {
            "alpha": alpha,
            "nu": beta - alpha,
            "M": np.asarray(self.molecular_weights),
            "frac": alpha != np.round(alpha),
        }

    @property
    def n_species(self) -> int:
        return len(self.species_names)

    @property
    def n_reactions(self) -> int:
        return len(self.reactions)

    @property
    def stoichiometry(self) -> np.ndarray:
        """Net stoichiometric matrix, shape (n_reactions, n_species)."""
        return self._arrays["nu"]

    @property
    def uses_temperature(self) -> bool:
        return any(r.rate.temperature_dependent for r in self.reactions)

    def index(self, name: str) -> int:
        return self.species_names.index(name)

    # -- vectorized kernels -------------------------------------------------

    def rate_constants(self, T=None) -> np.ndarray:
        """Forward rate constants, shape broadcast(T) + (n_reactions,)."""
        if self.n_reactions == 0:
            return np.zeros(np.shape(T) + (0,) if T is not None else (0,))
        ks = [np.asarray(rate_constant(r.rate, T), dtype=float) for r in self.reactions]
        ks = np.broadcast_arrays(*ks)
        return np.stack(ks, axis=-1)

    def _concentrations(self, Y, rho):
        M = self._arrays["M"]
        if rho is None:
            return Y / M
        return np.asarray(rho, dtype=float)[..., None] * Y / M

    def _powers(self, conc):
        """conc**alpha per reaction; shape (..., R, Ns).

        0**0 is 1 and 0**a is 0 for a > 0.  Negative concentrations are
        kept for integer exponents (polynomial continuation) and treated as
        zero for fractional ones.
        """
        alpha = self._arrays["alpha"]
        frac = self._arrays["frac"]
        c = conc[..., None, :]
        if frac.any():
            c = np.where(frac & (c < 0), 0.0, c)
        return c ** alpha

    def reaction_rates(self, Y, T=None, rho=None) -> np.ndarray:
        """Rate of progress of each reaction in concentration units."""
        Y = np.asarray(Y, dtype=float)
        conc = self._concentrations(Y, rho)
        k = self.rate_constants(T)
        return k * np.prod(self._powers(conc), axis=-1)

    def source(self, Y, T=None, rho=None) -> np.ndarray:
        """dY/dt for a batch of states; Y has shape (..., n_species)."""
        Y = np.asarray(Y, dtype=float)
        if Y.shape[-1] != self.n_species:
            raise DimensionMismatch(f"expected {self.n_species} mass fractions, got {Y.shape[-1]}")
        if self.n_reactions == 0:
            return np.zeros_like(Y)
        q = self.reaction_rates(Y, T, rho)
        scale = self._arrays["M"] if rho is None else self._arrays["M"] / np.asarray(rho, dtype=float)[..., None]
        return (q @ self._arrays["nu"]) * scale

    def source_jacobian(self, Y, T=None, rho=None) -> np.ndarray:
        """Analytic d(dY/dt)/dY, shape (..., Ns, Ns); temperature held fixed."""
        Y = np.asarray(Y, dtype=float)
        ns = self.n_species
        if self.n_reactions == 0:
            return np.zeros(Y.shape + (ns,))
        alpha = self._arrays["alpha"]
        nu = self._arrays["nu"]
        M = self._arrays["M"]
        conc = self._concentrations(Y, rho)
        k = self.rate_constants(T)
        pw = self._powers(conc)  # (..., R, Ns)
        c = conc[..., None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            dpw = np.where(alpha == 0, 0.0, alpha * c ** (alpha - 1))
        dpw = np.where(np.isfinite(dpw), dpw, 0.0)
        if self._arrays["frac"].any():
            dpw = np.where(self._arrays["frac"] & (c < 0), 0.0, dpw)
        dq = np.empty(pw.shape)
        for j in range(ns):
            rest = np.prod(np.delete(pw, j, axis=-1), axis=-1)
            dq[..., j] = k * rest * dpw[..., j]
        # d conc_j / d Y_j
        dc = 1.0 / M if rho is None else np.asarray(rho, dtype=float)[..., None] / M
        dq = dq * dc[..., None, :]
        scale = M if rho is None else M / np.asarray(rho, dtype=float)[..., None]
        # J_ij = scale_i * sum_r nu_ri dq_rj
        return np.einsum("ri,...rj->...ij", nu, dq) * scale[..., :, None]


# ---------------------------------------------------------------------------
# state-level operations
# ---------------------------------------------------------------------------

def _check_state(net: ReactionNetwork, s: State):
    if s.Y.shape != (net.n_species,):
        raise DimensionMismatch(f"expected {net.n_species} mass fractions, got shape {s.Y.shape}")
    if net.has_thermo_state and (s.T is None or s.rho is None):
        raise InvalidState("thermo network requires T and rho")


def production_rates(net: ReactionNetwork, s: State) -> np.ndarray:
    """dY/dt in 1/s for a single state."""
    _check_state(net, s)
    return net.source(s.Y, s.T, s.rho)


def jacobian(net: ReactionNetwork, s: State, eps: float = 1e-6) -> np.ndarray:
    """Central finite-difference Jacobian of ``production_rates`` w.r.t. Y.

    The perturbation for component j is ``eps * max(|Y_j|, 1)``; mass
    fractions live in [0, 1], so this is an absolute step of ``eps``.
    """
    if not eps > 0:
        raise ValueError("eps must be > 0")
    _check_state(net, s)
    ns = net.n_species
    J = np.empty((ns, ns))
    for j in range(ns):
        h = eps * max(abs(s.Y[j]), 1.0)
        yp = s.Y.copy()
        ym = s.Y.copy()
        yp[j] += h
        ym[j] -= h
        with np.errstate(over="ignore", invalid="ignore"):
            fp = net.source(yp, s.T, s.rho)
            fm = net.source(ym, s.T, s.rho)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise NonFiniteRate(f"non-finite rate while perturbing species {net.species_names[j]}")
        J[:, j] = (fp - fm) / (2 * h)
    return J


def stiffness_ratio(J) -> float:
    """max|Re(lambda)| / min nonzero |Re(lambda)| of a square matrix.

    Eigenvalues whose real part is below 1e-12 of the largest are treated
    as zero (conservation laws give exact zeros that roundoff blurs).
    """
    J = np.asarray(J, dtype=float)
    if J.ndim != 2 or J.shape[0] != J.shape[1]:
        raise DimensionMismatch(f"square matrix required, got shape {J.shape}")
    if not np.any(J):
        return 1.0
    re = np.abs(np.linalg.eigvals(J).real)
    big = re.max()
    if big == 0:
        return 1.0
    nonzero = re[re > 1e-12 * big]
    return float(big / max(nonzero.min(), STIFFNESS_FLOOR))


def energy_release_rate(net: ReactionNetwork, s: State, th: ThermoModel | None = None) -> float:
    """dT/dt = -(1/cp) * sum_k h_k * dY_k/dt."""
    th = th if th is not None else net.thermo
    if th is None:
        raise MissingThermo("energy release needs a ThermoModel")
    dY = production_rates(net, s)
    return float(-np.dot(th.enthalpies, dY) / th.cp)


def temperature_rate(th: ThermoModel, dY):
    """Batched form of the constant-cp temperature update."""
    return -(np.asarray(dY) @ np.asarray(th.enthalpies)) / th.cp


ROBER_RATES = (4e-2, 3e7, 1e4)


def rober_network() -> ReactionNetwork:
    """Robertson's three-species, three-reaction stiff benchmark.

    A -> B (k1), 2B -> B + C (k2), B + C -> A + C (k3) with rho = M = 1.
    """
    k1, k2, k3 = ROBER_RATES
    reactions = [
        Reaction({0: 1}, {1: 1}, Constant(k1)),
        Reaction({1: 2}, {1: 1, 2: 1}, Constant(k2)),
        Reaction({1: 1, 2: 1}, {0: 1, 2: 1}, Constant(k3)),
    ]
    return ReactionNetwork(["y1", "y2", "y3"], reactions, conserved_sum=True)


def network_fingerprint(net: ReactionNetwork) -> str:
    """Stable short hash of the network definition."""
    import hashlib

    parts = [",".join(net.species_names), repr(net.molecular_weights), repr(net.has_thermo_state),
             repr(net.conserved_sum)]
    for r in net.reactions:
        lhs = sorted((int(i), float(c)) for i, c in r.reactants.items())
        rhs = sorted((int(i), float(c)) for i, c in r.products.items())
        parts.append(f"{lhs}>{rhs}@{r.rate!r}")
    if net.thermo is not None:
        parts.append(repr(net.thermo))
    return hashlib.sha256("|".join(parts).encode()).hexdigest()[:16]
