import numpy as np
import pytest
from scipy import stats

from stiffscale.errors import EmptyData, InvalidRange
from stiffscale.kinetics import State, rober_network
from stiffscale.parallel import set_threads
from stiffscale.sampling import (Range, SamplingConfig, augment_by_evolution, build_dataset, draw_raw,
                                 generate_pairs, load_dataset, load_pairs, monte_carlo_states, pairs_to_arrays,
                                 rober_sampling, save_dataset, save_pairs, split)
from stiffscale.transforms import TransformSpec


def test_determinism_and_normalisation():
    net = rober_network()
    cfg = SamplingConfig(n_initial=200, y_ranges=((1e-10, 1.0),), seed=5)
    a = monte_carlo_states(net, cfg)
    b = monte_carlo_states(net, cfg)
    assert all(np.array_equal(x.Y, y.Y) for x, y in zip(a, b))
    assert max(abs(s.Y.sum() - 1) for s in a) <= 1e-12


def test_invalid_configs():
    with pytest.raises(InvalidRange):
        SamplingConfig(n_initial=0)
    with pytest.raises(InvalidRange):
        Range(1.0, 0.5)
    with pytest.raises(InvalidRange):
        Range(0.0, 1.0, "log")
    with pytest.raises(InvalidRange):
        SamplingConfig(y_ranges=((1e-3, 1), (1e-3, 1))).ranges_for(3)


def test_log_coverage():
    net = rober_network()
    cfg = SamplingConfig(n_initial=10**4, y_ranges=((1e-10, 1.0),), seed=1)
    logs = np.array([np.log10(draw_raw(net, cfg, i)[0][0]) for i in range(cfg.n_initial)])
    assert logs.max() - logs.min() >= 9
    assert stats.kstest((logs + 10) / 10, "uniform").statistic < 0.05


def test_augment_counts_and_equilibrium():
    net = rober_network()
    cfg = SamplingConfig(n_initial=1, y_ranges=((1e-3, 1.0),), n_evolution_steps=5)
    aug = augment_by_evolution([State(np.array([0.5, 1e-5, 0.49999]))], net, cfg)
    assert len(aug.pairs) == 5 and aug.n_skipped == 0
    for (a, b), (c, _) in zip(aug.pairs, aug.pairs[1:]):
        assert np.array_equal(b.Y, c.Y)
    eq = augment_by_evolution([State(np.array([0.0, 0.0, 1.0]))], net, cfg)
    assert all(np.array_equal(a.Y, b.Y) for a, b in eq.pairs)


def test_rober_pairs_satisfy_invariants():
    net = rober_network()
    aug = generate_pairs(net, rober_sampling(n_initial=100, n_evolution_steps=10, seed=2))
    assert len(aug.pairs) <= 1000 and len(aug.pairs) + 10 * aug.n_skipped == 1000
    for a, b in aug.pairs:
        a.validate(net)
        b.validate(net)


def test_thread_count_independence():
    net = rober_network()
    cfg = rober_sampling(n_initial=1100, n_evolution_steps=2, seed=9)
    try:
        set_threads(1)
        one = pairs_to_arrays(generate_pairs(net, cfg).pairs)
        set_threads(3)
        three = pairs_to_arrays(generate_pairs(net, cfg).pairs)
    finally:
        set_threads(None)
    assert np.array_equal(one["Y1"], three["Y1"])


def test_build_dataset_properties():
    net = rober_network()
    aug = generate_pairs(net, rober_sampling(n_initial=300, n_evolution_steps=4, seed=3))
    ds = build_dataset(aug.pairs, TransformSpec(), {"seed": 3})
    assert np.all(np.isfinite(ds.inputs)) and np.all(np.isfinite(ds.labels))
    np.testing.assert_allclose(ds.inputs.mean(0), 0, atol=1e-10)
    np.testing.assert_allclose(ds.labels.std(0), 1, rtol=1e-10)
    assert ds.provenance["seed"] == 3 and "transform_fingerprint" in ds.provenance
    single = build_dataset([(State(np.array([0.5, 0.1, 0.4])),) * 2], TransformSpec())
    assert np.all(single.labels == 0)
    with pytest.raises(EmptyData):
        build_dataset([], TransformSpec())


def test_split_rules():
    net = rober_network()
    aug = generate_pairs(net, rober_sampling(n_initial=10, n_evolution_steps=10, seed=4))
    ds = build_dataset(aug.pairs, TransformSpec())
    tr, va = split(ds, 0.9, seed=1)
    assert (len(tr), len(va)) == (90, 10)
    tr2, _ = split(ds, 0.9, seed=1)
    assert np.array_equal(tr.inputs, tr2.inputs)
    rows = {tuple(r) for r in np.concatenate([tr.inputs, va.inputs])}
    assert len(rows) == len({tuple(r) for r in ds.inputs})
    assert not ({tuple(r) for r in tr.inputs} & {tuple(r) for r in va.inputs})
    small = ds.subset(np.arange(3))
    a, b = split(small, 0.5, seed=0)
    assert (len(a), len(b)) == (1, 2)
    with pytest.raises(ValueError):
        split(ds, 1.0)


def test_file_round_trips(tmp_path):
    net = rober_network()
    aug = generate_pairs(net, rober_sampling(n_initial=20, n_evolution_steps=3, seed=6))
    raw = pairs_to_arrays(aug.pairs)
    save_pairs(raw, net.species_names, tmp_path / "pairs.csv")
    back = load_pairs(tmp_path / "pairs.csv")
    assert np.array_equal(back["Y0"], raw["Y0"]) and np.array_equal(back["Y1"], raw["Y1"])
    ds = build_dataset(raw, TransformSpec(), {"seed": 6})
    save_dataset(ds, tmp_path / "d.csv")
    header = (tmp_path / "d.csv").read_text().splitlines()[0]
    assert header == "in_0,in_1,in_2,lab_0,lab_1,lab_2"
    ds2 = load_dataset(tmp_path / "d.csv")
    assert np.array_equal(ds2.inputs, ds.inputs) and np.array_equal(ds2.labels, ds.labels)
    assert ds2.spec.label_stats.mean.tolist() == ds.spec.label_stats.mean.tolist()
