"""Shared fixtures: the ROBER training set and the desk-scale trained models
are expensive, so they are built once per session and only on demand."""
import time

import numpy as np
import pytest

from stiffscale.kinetics import rober_network
from stiffscale.sampling import build_dataset, generate_pairs, pairs_to_arrays, rober_sampling, split
from stiffscale.surrogate import TrainConfig, init_mlp, train
from stiffscale.transforms import TransformSpec

ACCEPTANCE_SEEDS = (0, 1, 2)
DESK_HIDDEN = (256, 128, 64)

_results: list[tuple[str, bool, str]] = []


def record(criterion: str, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} | {detail}"
    print(line, flush=True)
    _results.append((criterion, ok, line))


def pytest_terminal_summary(terminalreporter):
    if _results:
        terminalreporter.section("acceptance criteria")
        for _, _, line in sorted(_results, key=lambda r: r[0]):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def rober_net():
    return rober_network()


@pytest.fixture(scope="session")
def rober_pairs(rober_net):
    aug = generate_pairs(rober_net, rober_sampling(n_initial=2000, n_evolution_steps=10, seed=0))
    return pairs_to_arrays(aug.pairs)


@pytest.fixture(scope="session")
def rober_datasets(rober_pairs):
    return {lt: build_dataset(rober_pairs, TransformSpec(label_transform=lt)) for lt in ("gbct", "bct")}


@pytest.fixture(scope="session")
def trained_models(rober_datasets):
    """{(label_transform, seed): (model, spec)} at desk scale."""
    models = {}
    for seed in ACCEPTANCE_SEEDS:
        for lt, ds in rober_datasets.items():
            tr, va = split(ds, 0.9, seed)
            sizes = [ds.inputs.shape[1], *DESK_HIDDEN, ds.labels.shape[1]]
            t0 = time.perf_counter()
            model, hist = train(init_mlp(sizes, seed), tr, va, TrainConfig(seed=seed))
            print(f"trained {lt} seed {seed} in {time.perf_counter() - t0:.0f}s, "
                  f"val loss {hist['val_loss'][-1]:.4g}", flush=True)
            models[(lt, seed)] = (model, ds.spec)
    return models
