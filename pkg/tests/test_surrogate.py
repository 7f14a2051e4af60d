import json

import numpy as np
import pytest
from scipy.special import erf

from stiffscale.errors import CorruptCheckpoint, DimensionMismatch, FormatVersionMismatch, NonFiniteLoss
from stiffscale.kinetics import State, rober_network
from stiffscale.sampling import Dataset, build_dataset, generate_pairs, rober_sampling, split
from stiffscale.surrogate import (MLP, TrainConfig, forward, gelu, init_mlp, l1_loss, load_checkpoint,
                                  loss_and_grads, predict_batch, predict_step, read_checkpoint, rollout,
                                  save_checkpoint, train)
from stiffscale.transforms import TransformSpec, ZScore, unscale_prediction


def zero_mlp(sizes):
    m = init_mlp(sizes, 0)
    m.set_flat(np.zeros(m.n_params()))
    return m


def test_gelu_matches_erf_form():
    x = np.linspace(-10, 10, 1000)
    ref = x * 0.5 * (1 + erf(x / np.sqrt(2)))
    assert np.abs(gelu(x) - ref).max() <= 1e-12
    assert gelu(0.0) == 0.0


def test_forward_examples():
    m = zero_mlp([4, 7, 3])
    assert np.all(forward(m, np.random.default_rng(0).standard_normal((5, 4))) == 0)
    ident = MLP([3, 3], [np.eye(3)], [np.zeros(3)])
    x = np.array([0.3, -2.0, 5.0])
    assert np.array_equal(forward(ident, x), x)
    with pytest.raises(DimensionMismatch):
        forward(ident, np.ones(4))
    with pytest.raises(DimensionMismatch):
        MLP([3, 2], [np.eye(3)], [np.zeros(3)])


def test_l1_loss():
    a = np.random.default_rng(1).standard_normal((4, 3))
    assert l1_loss(a, a) == 0.0
    assert l1_loss(a + 1, a) == pytest.approx(1.0)
    assert l1_loss([[0.0]], [[2.0]]) == 2.0
    with pytest.raises(DimensionMismatch):
        l1_loss(np.ones(3), np.ones(2))


def test_gradient_check_2_8_2():
    rng = np.random.default_rng(2)
    m = init_mlp([2, 8, 2], 3)
    X = rng.standard_normal((16, 2))
    Y = forward(m, X) + rng.choice([-1, 1], (16, 2)) * rng.uniform(0.05, 0.5, (16, 2))
    _, grads = loss_and_grads(m, X, Y)
    g = np.concatenate([p.ravel() for p in grads])
    theta = m.flat()
    fd = np.empty_like(theta)
    h = 1e-6
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        m.set_flat(tp)
        lp = l1_loss(forward(m, X), Y)
        m.set_flat(tm)
        lm = l1_loss(forward(m, X), Y)
        fd[i] = (lp - lm) / (2 * h)
    m.set_flat(theta)
    assert np.abs(forward(m, X) - Y).min() > 1e-3
    np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-4 * np.abs(fd).max())


def _toy(n=64, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 2))
    Y = X @ np.array([[1.0, -0.5], [0.3, 2.0]]) + 0.1
    return Dataset(X, Y, TransformSpec())


def test_zero_epochs_returns_unchanged():
    m = init_mlp([2, 8, 2], 0)
    out, hist = train(m, _toy(), _toy(8, 1), TrainConfig(stage1_epochs=0, stage2_epochs=0))
    assert np.array_equal(out.flat(), m.flat())
    assert hist["train_loss"] == [] and hist["val_loss"] == []


def test_single_sample_toy_loss_decreases():
    ds = _toy(1)
    m = init_mlp([2, 8, 2], 4)
    cfg = TrainConfig(stage1_epochs=200, stage1_batch=1, stage1_lr=1e-2, stage2_epochs=50, stage2_lr=1e-3)
    _, hist = train(m, ds, ds, cfg)
    loss = hist["train_loss"]
    assert loss[-1] < 0.1 * loss[0]
    assert hist["stage"][0] == 1 and hist["stage"][-1] == 2


def test_training_determinism():
    cfg = TrainConfig(stage1_epochs=5, stage1_batch=16, stage2_epochs=3, stage2_batch_multiplier=2, seed=7)
    runs = [train(init_mlp([2, 16, 2], 7), _toy(), _toy(8, 1), cfg) for _ in range(2)]
    assert np.array_equal(runs[0][0].flat(), runs[1][0].flat())
    assert runs[0][1] == runs[1][1]


def test_nonfinite_loss_aborts():
    ds = _toy()
    ds.labels[3, 0] = np.inf
    with pytest.raises(NonFiniteLoss):
        train(init_mlp([2, 4, 2], 0), ds, ds, TrainConfig(stage1_epochs=1))


def test_dataset_model_mismatch():
    with pytest.raises(DimensionMismatch):
        train(init_mlp([3, 4, 2], 0), _toy(), _toy(), TrainConfig(stage1_epochs=1))


def _rober_spec():
    net = rober_network()
    aug = generate_pairs(net, rober_sampling(n_initial=20, n_evolution_steps=3, seed=1))
    return net, build_dataset(aug.pairs, TransformSpec())


def test_zero_label_model_is_identity():
    net, ds = _rober_spec()
    m = zero_mlp([3, 8, 3])
    # output bias = Z-scored zero label
    m.biases[-1][:] = -ds.spec.label_stats.mean / ds.spec.label_stats.std
    s = State(np.array([0.7, 1e-5, 0.29999]))
    out = predict_step(m, ds.spec, net, s)
    np.testing.assert_allclose(out.Y, s.Y / s.Y.sum(), rtol=1e-12)
    traj = rollout(m, ds.spec, net, s, 4)
    assert len(traj) == 5 and traj.times[-1] == pytest.approx(4 * ds.spec.dt)
    assert all(np.allclose(t.Y, s.Y, rtol=1e-12) for t in traj.states)
    assert len(rollout(m, ds.spec, net, s, 0)) == 1


def test_predict_step_normalises_and_thermo():
    net, ds = _rober_spec()
    m = init_mlp([3, 8, 3], 5)
    out = predict_step(m, ds.spec, net, State(np.array([0.5, 0.1, 0.4])))
    assert out.Y.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.all((out.Y >= 0) & (out.Y <= 1))


def test_predict_temperature_update():
    from stiffscale.kinetics import Constant, Reaction, ReactionNetwork, ThermoModel

    net = ReactionNetwork(["a", "b"], [Reaction({0: 1}, {1: 1}, Constant(1.0))], has_thermo_state=True,
                          thermo=ThermoModel(2.0, (0.0, -40.0)), conserved_sum=True)
    spec = TransformSpec(thermo=("T", "rho"), dt=1e-3)
    m = init_mlp([4, 6, 2], 1)
    Y = np.array([[0.6, 0.4]])
    Yn, Tn = predict_batch(m, spec, net, Y, np.array([900.0]), np.array([1.0]))
    assert Tn[0] == pytest.approx(900.0 + 40.0 * (Yn[0, 1] - 0.4) / 2.0, rel=1e-12)


def test_checkpoint_round_trip(tmp_path):
    net, ds = _rober_spec()
    m = init_mlp([3, 16, 8, 3], 9)
    hist = {"train_loss": [0.5, 0.25], "val_loss": [0.6, 0.3], "stage": [1, 2]}
    p = tmp_path / "ck.json"
    save_checkpoint(m, ds.spec, p, net, hist)
    m2, spec2 = load_checkpoint(p)
    X = np.random.default_rng(0).standard_normal((100, 3))
    assert np.array_equal(forward(m, X), forward(m2, X))
    assert spec2.to_dict() == ds.spec.to_dict()
    p2 = tmp_path / "ck2.json"
    save_checkpoint(m2, spec2, p2, net, read_checkpoint(p).history)
    assert p.read_bytes() == p2.read_bytes()
    d = json.loads(p.read_text())
    assert {"format_version", "layer_sizes", "activation", "transform_spec", "params_base64", "history"} <= set(d)


def test_checkpoint_errors(tmp_path):
    net, ds = _rober_spec()
    p = tmp_path / "ck.json"
    save_checkpoint(init_mlp([3, 4, 3], 0), ds.spec, p, net)
    text = p.read_text()
    (tmp_path / "trunc.json").write_text(text[: len(text) // 2])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path / "trunc.json")
    d = json.loads(text)
    d["format_version"] = 99
    (tmp_path / "v.json").write_text(json.dumps(d))
    with pytest.raises(FormatVersionMismatch):
        load_checkpoint(tmp_path / "v.json")
    d = json.loads(text)
    d["layer_sizes"] = [3, 5, 3]
    (tmp_path / "n.json").write_text(json.dumps(d))
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path / "n.json")


def test_label_space_faithfulness():
    net = rober_network()
    aug = generate_pairs(net, rober_sampling(n_initial=10, n_evolution_steps=1, seed=8))
    ds = build_dataset(aug.pairs, TransformSpec())
    cfg = TrainConfig(stage1_epochs=3000, stage1_batch=10, stage1_lr=3e-3, stage2_epochs=1000, stage2_lr=3e-4, seed=0)
    m, hist = train(init_mlp([3, 32, 32, 3], 0), ds, ds, cfg)
    assert hist["train_loss"][-1] < 1e-2
    pred = forward(m, ds.inputs)
    res = np.abs(pred - ds.labels)
    Y0, Y1 = ds.raw["Y0"], ds.raw["Y1"]
    got = np.array([predict_step(m, ds.spec, net, State(y)).Y for y in Y0])
    # local sensitivity of the inverse map, per component, by central differences
    h = 1e-6
    sens = np.empty_like(res)
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        up = unscale_prediction(ds.labels + e, Y0, ds.spec)
        dn = unscale_prediction(ds.labels - e, Y0, ds.spec)
        sens[:, j] = np.abs(up[:, j] - dn[:, j]) / (2 * h)
    bound = 10 * (sens * res).sum(axis=1, keepdims=True) + 1e-15
    assert np.all(np.abs(got - Y1) <= bound)
