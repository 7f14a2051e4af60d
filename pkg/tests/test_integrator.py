import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from stiffscale.errors import NonFiniteState
from stiffscale.integrator import (SOLVER_NAME, SolverConfig, advance, integrate_implicit, integrate_rk4, propagate,
                                   step_fixed, write_trajectory_csv)
from stiffscale.kinetics import (Constant, Reaction, ReactionNetwork, State, ThermoModel, energy_release_rate,
                                 rober_network)

from oracles import implicit_euler, rober_jac, rober_rhs


def decay(k=1.0):
    return ReactionNetwork(["a"], [Reaction({0: 1}, {}, Constant(k))])


def test_linear_decay_closed_form():
    # rel_tol bounds the local error per step; for a second-order method the
    # accumulated global error on a smooth problem scales like rel_tol**(2/3)
    errs = []
    for tol in (1e-6, 1e-8, 1e-10):
        cfg = SolverConfig(rel_tol=tol)
        tr = integrate_implicit(decay(), State([1.0]), 1.0, cfg)
        assert tr.times[-1] == 1.0
        err = abs(tr.final().Y[0] / math.exp(-1) - 1)
        assert err <= tol ** (2 / 3)
        errs.append(err)
    assert errs[0] > errs[1] > errs[2]
    assert tr.metadata["solver"] == SOLVER_NAME
    assert np.all(np.diff(tr.times) > 0) and len(tr.times) == len(tr.states)


def test_truncated_single_step():
    cfg = SolverConfig(initial_step=1e-3)
    tr = integrate_implicit(decay(), State([1.0]), 1e-5, cfg)
    assert tr.times == [0.0, 1e-5]
    assert tr.final().Y[0] == pytest.approx(math.exp(-1e-5), rel=1e-12)


def test_rober_against_implicit_euler_tiny_step():
    net = rober_network()
    y0 = np.array([1.0, 0.0, 0.0])
    s = State(y0)
    # short horizon version of the acceptance check; the full t=40 run lives there
    sched = [(1e-3, 1e-7), (1e-2, 1e-6)]
    ref = 2 * implicit_euler(rober_rhs, rober_jac, y0, [(t, h / 2) for t, h in sched]) \
        - implicit_euler(rober_rhs, rober_jac, y0, sched)
    got = step_fixed(net, s, 1e-2)
    np.testing.assert_allclose(got.Y, ref, rtol=1e-6)


def test_step_fixed_first_order_expansion():
    net = rober_network()
    s1 = step_fixed(net, State([1.0, 0.0, 0.0]), 7e-7)
    drop = 1.0 - s1.Y[0]
    assert drop == pytest.approx(0.04 * 7e-7, rel=1e-3)
    sched = [(7e-7, 7e-10)]
    ref = 2 * implicit_euler(rober_rhs, rober_jac, [1.0, 0, 0], [(7e-7, 3.5e-10)]) \
        - implicit_euler(rober_rhs, rober_jac, [1.0, 0, 0], sched)
    np.testing.assert_allclose(s1.Y, ref, rtol=1e-7, atol=SolverConfig().abs_tol)


def test_step_fixed_identity_and_equilibrium():
    net = rober_network()
    s = State([0.3, 1e-6, 0.699999])
    out = step_fixed(net, s, 0.0)
    assert np.array_equal(out.Y, s.Y) and out is not s
    eq = State([0.0, 0.0, 1.0])
    np.testing.assert_allclose(step_fixed(net, eq, 5.0).Y, eq.Y, atol=SolverConfig().abs_tol)


def test_semigroup():
    net = rober_network()
    cfg = SolverConfig()
    rng = np.random.default_rng(3)
    for _ in range(5):
        y = 10 ** rng.uniform(-8, 0, 3)
        s = State(y / y.sum())
        dt = 7e-7
        a = step_fixed(net, step_fixed(net, s, dt, cfg), dt, cfg)
        b = step_fixed(net, s, 2 * dt, cfg)
        tol = 10 * (cfg.rel_tol * np.abs(b.Y) + cfg.abs_tol)
        assert np.all(np.abs(a.Y - b.Y) <= tol)


def test_conservation_over_fixed_steps():
    net = rober_network()
    Y = np.array([[1.0, 0.0, 0.0], [0.2, 1e-5, 0.79999]])
    Y /= Y.sum(axis=1, keepdims=True)
    start = Y.sum(axis=1)
    for _ in range(2000):
        Y, _, failed = advance(net, Y, 7e-7)
        assert not failed.any()
    assert np.abs(Y.sum(axis=1) - start).max() <= 1e-9
    assert Y.min() >= 0


def _random_network(rng):
    ns = int(rng.integers(2, 5))
    reactions = []
    for _ in range(int(rng.integers(2, 5))):
        a, b = rng.choice(ns, 2, replace=False)
        order = int(rng.integers(1, 3))
        k = float(10 ** rng.uniform(-0.5, 0.5))
        reactions.append(Reaction({int(a): order}, {int(b): order}, Constant(k)))
    return ReactionNetwork([f"s{i}" for i in range(ns)], reactions)


def test_tolerance_halving_never_hurts():
    rng = np.random.default_rng(11)
    for _ in range(10):
        net = _random_network(rng)
        y0 = rng.uniform(0.1, 1.0, net.n_species)
        y0 /= y0.sum()
        ref = solve_ivp(lambda t, y: net.source(y), (0, 1.0), y0, method="Radau", rtol=1e-13, atol=1e-15,
                        jac=lambda t, y: net.source_jacobian(y)).y[:, -1]
        errs = []
        for tol in (1e-4, 5e-5, 2.5e-5, 1.25e-5):
            got = integrate_implicit(net, State(y0), 1.0, SolverConfig(rel_tol=tol, abs_tol=1e-12)).final().Y
            errs.append(np.abs(got - ref).max())
        assert errs[0] > 1e-9
        assert all(b <= a for a, b in zip(errs, errs[1:])), errs


def test_rk4_linear_and_constant():
    tr = integrate_rk4(decay(), State([1.0]), 1.0, 1000)
    assert abs(tr.final().Y[0] - math.exp(-1)) < 1e-9
    const = ReactionNetwork(["a"], [Reaction({0: 1}, {}, Constant(0.0))])
    tr = integrate_rk4(const, State([0.4]), 1.0, 10)
    assert all(s.Y[0] == 0.4 for s in tr.states)


def test_rk4_rober_instability_threshold():
    net = rober_network()
    s0 = State([1.0, 0.0, 0.0])
    with pytest.raises(NonFiniteState):
        integrate_rk4(net, s0, 1.0, 100)
    fine = integrate_rk4(net, s0, 1.0, 5000).final().Y
    ref = integrate_implicit(net, s0, 1.0).final().Y
    np.testing.assert_allclose(fine, ref, rtol=1e-6)


def test_thermo_coupling_matches_energy_release():
    th = ThermoModel(2.0, (0.0, -50.0))
    net = ReactionNetwork(["a", "b"], [Reaction({0: 1}, {1: 1}, Constant(3.0))], has_thermo_state=True,
                          thermo=th, conserved_sum=True)
    s0 = State([1.0, 0.0], T=1000.0, rho=1.0)
    s1 = step_fixed(net, s0, 0.2)
    # T - T0 = -(1/cp) sum h_k (Y_k - Y0_k) for a constant-cp, constant-rho reactor
    assert s1.T == pytest.approx(1000.0 + 50.0 * s1.Y[1] / 2.0, rel=1e-9)
    assert energy_release_rate(net, s0) == pytest.approx(75.0)


def test_trajectory_csv(tmp_path):
    net = rober_network()
    tr = propagate(net, State([1.0, 0.0, 0.0]), 7e-7, 3)
    p = tmp_path / "t.csv"
    write_trajectory_csv(tr, net, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "t,Y_y1,Y_y2,Y_y3"
    assert len(lines) == 5
    assert float(lines[2].split(",")[0]) == 7e-7
