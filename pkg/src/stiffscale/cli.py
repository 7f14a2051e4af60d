"""Command-line entry point: stiffscale <command> --config run.toml ...

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .errors import (ConfigError, CorruptCheckpoint, FormatVersionMismatch, InvalidNetwork, InvalidRange,
                     StiffscaleError)
from .freq import lfr_curve, rdf, rdf_centroid, write_curve_csv
from .integrator import propagate, write_trajectory_csv
from .kinetics import State, network_fingerprint
from .parallel import set_threads
from .pdesim import (DirectBackend, RK4Backend, SimConfig, SurrogateBackend, compare_results, export_snapshots,
                     init_rober_gaussian, run_simulation)
from .sampling import (build_dataset, generate_pairs, load_dataset, load_pairs, pairs_to_arrays, save_dataset,
                       save_pairs, split)
from .surrogate import init_mlp, predict_batch, read_checkpoint, rollout, save_checkpoint, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def _versions() -> dict:
    import scipy

    return {"stiffscale": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _write_manifest(out: Path, command: str, cfg: RunConfig, args: dict, outputs: list):
    manifest = {"command": command, "config": cfg.to_dict(), "args": args, "versions": _versions(),
                "outputs": sorted(outputs)}
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _outdir(cfg: RunConfig, name: str) -> Path:
    out = cfg.output_dir / name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _pairs_path(cfg: RunConfig) -> Path:
    return cfg.output_dir / "data" / "pairs.csv"


def _require(path: Path, what: str) -> Path:
    if not Path(path).is_file():
        raise ConfigError(f"{what} not found: {path}")
    return Path(path)


def _dataset_for(cfg: RunConfig, label_transform: str):
    from dataclasses import replace

    raw = load_pairs(_require(_pairs_path(cfg), "pairs file (run gen-data first)"))
    spec = replace(cfg.transform, label_transform=label_transform)
    prov = {"seed": cfg.seed, "sampling": cfg.sampling.to_dict(), "pairs_file": "pairs.csv"}
    return build_dataset(raw, spec, prov)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(cfg: RunConfig, args) -> int:
    net = cfg.load_network()
    out = _outdir(cfg, "data")
    aug = generate_pairs(net, cfg.sampling, cfg.solver)
    if not aug.pairs:
        raise StiffscaleError("every trajectory failed; no pairs generated")
    raw = pairs_to_arrays(aug.pairs)
    save_pairs(raw, net.species_names, out / "pairs.csv")
    prov = {"seed": cfg.seed, "sampling": cfg.sampling.to_dict(), "n_skipped": aug.n_skipped,
            "network_fingerprint": network_fingerprint(net), "pairs_file": "pairs.csv"}
    ds = build_dataset(raw, cfg.transform, prov)
    save_dataset(ds, out / "dataset.csv")
    print(f"gen-data: {len(ds)} pairs from {cfg.sampling.n_initial} initial states, {aug.n_skipped} skipped")
    _write_manifest(out, "gen-data", cfg, {}, ["pairs.csv", "dataset.csv", "dataset.json"])
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    lt = args.label_transform or cfg.transform.label_transform
    net = cfg.load_network()
    ds = _dataset_for(cfg, lt)
    tr, va = split(ds, cfg.train_fraction, cfg.seed)
    sizes = [ds.inputs.shape[1], *cfg.hidden, ds.labels.shape[1]]
    model = init_mlp(sizes, cfg.seed)
    every = max(1, (cfg.train.stage1_epochs + cfg.train.stage2_epochs) // 20)

    def log(epoch, stage, tl, vl):
        if epoch % every == 0:
            print(f"epoch {epoch:5d} stage {stage} train {tl:.6g} val {vl:.6g}", flush=True)

    model, hist = train(model, tr, va, cfg.train, log=log)
    out = _outdir(cfg, f"train_{lt}")
    save_checkpoint(model, ds.spec, out / "model.json", net, hist,
                    extra={"seed": cfg.seed, "n_train": len(tr), "n_val": len(va)})
    with open(out / "history.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "stage", "train_loss", "val_loss"])
        for i, (s, a, b) in enumerate(zip(hist["stage"], hist["train_loss"], hist["val_loss"])):
            w.writerow([i + 1, s, f"{a:.17g}", f"{b:.17g}"])
    final = f"{hist['val_loss'][-1]:.6g}" if hist["val_loss"] else "n/a"
    print(f"train[{lt}]: {len(tr)} train / {len(va)} val rows, final val loss {final}")
    _write_manifest(out, "train", cfg, {"label_transform": lt}, ["model.json", "history.csv"])
    return EXIT_OK


def _load_model(path, net):
    ck = read_checkpoint(_require(Path(path), "checkpoint"))
    if ck.network_fingerprint is not None and ck.network_fingerprint != network_fingerprint(net):
        raise ConfigError(f"checkpoint {path} was trained on a different reaction network")
    return ck


def _y0(cfg: RunConfig, args, net):
    y0 = cfg.rollout.y0 if args.y0 is None else tuple(float(v) for v in args.y0.split(","))
    if len(y0) != net.n_species:
        raise ConfigError(f"initial state needs {net.n_species} mass fractions, got {len(y0)}")
    return State(np.array(y0, dtype=float))


def _rollout_errors(ck, net, s0, n, ref):
    traj = rollout(ck.model, ck.spec, net, s0, n)
    err = np.abs(traj.Y() - ref.Y())
    return traj, err


def cmd_rollout(cfg: RunConfig, args) -> int:
    net = cfg.load_network()
    ck = _load_model(args.checkpoint, net)
    s0 = _y0(cfg, args, net)
    n = cfg.rollout.n_steps if args.n_steps is None else args.n_steps
    ref = propagate(net, s0, ck.spec.dt, n, cfg.solver)
    traj, err = _rollout_errors(ck, net, s0, n, ref)
    out = Path(args.out) if args.out else _outdir(cfg, "rollout")
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(traj, net, out / "surrogate.csv")
    write_trajectory_csv(ref, net, out / "reference.csv")
    with open(out / "error.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"abs_err_{s}" for s in net.species_names])
        for t, e in zip(traj.times, err):
            w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in e])
    print("rollout max-abs error: " + ", ".join(f"{s}={v:.3e}" for s, v in zip(net.species_names, err.max(axis=0))))
    _write_manifest(out, "rollout", cfg, {"checkpoint": str(args.checkpoint), "n_steps": n},
                    ["surrogate.csv", "reference.csv", "error.csv"])
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, args) -> int:
    net = cfg.load_network()
    if net.n_species != 3:
        raise ConfigError("simulate uses the three-species Gaussian initial condition")
    s = cfg.sim
    backend_name = args.backend
    sim_cfg = SimConfig(dt=s.dt, n_steps=s.n_steps, backend=backend_name, checkpoint=args.checkpoint,
                        safety=s.safety, snapshot_every=s.snapshot_every, normalize=s.normalize)
    g0 = init_rober_gaussian(s.nx, s.ny, s.D, s.bc)
    direct = DirectBackend(net, cfg.solver)
    reference = run_simulation(g0, sim_cfg, direct)
    if backend_name == "direct":
        res = reference
        res.metrics = compare_results(res, reference, sim_cfg.rel_floor)
    else:
        if backend_name == "surrogate":
            ck = _load_model(args.checkpoint, net)
            backend = SurrogateBackend(ck.model, ck.spec, net)
        else:
            backend = RK4Backend(net)
        res = run_simulation(g0, sim_cfg, backend, reference=reference)
    out = _outdir(cfg, f"sim_{backend_name}")
    export_snapshots(res, g0, net.species_names, out, config=cfg.to_dict()["sim"], reference=reference)
    (out / "metrics.json").write_text(json.dumps(res.metrics, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    last = res.metrics[-1]
    print(f"simulate[{backend_name}]: {s.n_steps} steps on {s.nx}x{s.ny}; final max-abs error "
          + ", ".join(f"{n}={v:.3e}" for n, v in zip(net.species_names, last["max_abs"])))
    outputs = sorted(p.name for p in out.iterdir() if p.name != "run_manifest.json")
    _write_manifest(out, "simulate", cfg, {"backend": backend_name, "checkpoint": args.checkpoint}, outputs)
    return EXIT_OK


def cmd_freq(cfg: RunConfig, args) -> int:
    out = _outdir(cfg, "freq")
    if args.dataset:
        ds = load_dataset(_require(Path(args.dataset), "dataset"))
        runs = {Path(args.dataset).stem: ds}
    else:
        runs = {lt: _dataset_for(cfg, lt) for lt in ("bct", "gbct")}
    summary, outputs = {}, []
    for name, ds in runs.items():
        curve = lfr_curve(ds.inputs, ds.labels, cfg.freq)
        r = rdf(curve)
        fn = f"freq_{name}.csv"
        write_curve_csv(curve, r, out / fn)
        outputs.append(fn)
        summary[name] = {"rdf_centroid_log": rdf_centroid(r, "log"), "rdf_centroid_linear": rdf_centroid(r, "linear"),
                         "lfr_min": min(c[1] for c in curve), "lfr_max": max(c[1] for c in curve)}
        print(f"freq[{name}]: RDF centroid k0 = {summary[name]['rdf_centroid_log']:.4g} (log-mean)")
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    _write_manifest(out, "freq", cfg, {"dataset": args.dataset}, outputs + ["summary.json"])
    return EXIT_OK


def _quantiles(e):
    return {q: [float(v) for v in np.quantile(e, p, axis=0)] for q, p in
            (("p50", 0.5), ("p90", 0.9), ("p99", 0.99), ("max", 1.0))}


def cmd_compare(cfg: RunConfig, args) -> int:
    net = cfg.load_network()
    cks = {"a": _load_model(args.a, net), "b": _load_model(args.b, net)}
    s0 = _y0(cfg, args, net)
    n = cfg.rollout.n_steps
    dt = cks["a"].spec.dt
    if cks["b"].spec.dt != dt:
        raise ConfigError("checkpoints use different macro steps")
    ref = propagate(net, s0, dt, n, cfg.solver)
    metrics = {"protocol": {"y0": list(s0.Y), "n_steps": n, "dt": dt}}
    pairs_file = _pairs_path(cfg)
    held = None
    if pairs_file.is_file():
        raw = load_pairs(pairs_file)
        perm = np.random.default_rng(cfg.seed).permutation(raw["Y0"].shape[0])
        held = np.sort(perm[int(np.floor(cfg.train_fraction * perm.size)):])
    for key, ck in cks.items():
        _, err = _rollout_errors(ck, net, s0, n, ref)
        m = {"checkpoint": str(getattr(args, key)), "label_transform": ck.spec.label_transform,
             "rollout_max_abs": [float(v) for v in err.max(axis=0)]}
        if held is not None:
            Yp, _ = predict_batch(ck.model, ck.spec, net, raw["Y0"][held])
            m["one_step_abs_error"] = _quantiles(np.abs(Yp - raw["Y1"][held]))
        metrics[key] = m
        print(f"compare[{key}={ck.spec.label_transform}]: rollout max-abs "
              + ", ".join(f"{s}={v:.3e}" for s, v in zip(net.species_names, m["rollout_max_abs"])))
    out = _outdir(cfg, "compare")
    (out / "metrics.json").write_text(json.dumps(metrics, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    _write_manifest(out, "compare", cfg, {"a": str(args.a), "b": str(args.b)}, ["metrics.json"])
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "rollout": cmd_rollout,
            "simulate": cmd_simulate, "freq": cmd_freq, "compare": cmd_compare}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stiffscale", description="Stiff-kinetics surrogate pipeline")
    p.add_argument("--threads", type=int, default=None, help="worker cap (default: $STIFFSCALE_THREADS or 1)")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="run configuration TOML")
        if name == "train":
            sp.add_argument("--label-transform", choices=("bct", "gbct"), default=None)
        if name == "rollout":
            sp.add_argument("--checkpoint", required=True)
            sp.add_argument("--y0", default=None, help="comma-separated initial mass fractions")
            sp.add_argument("--n-steps", type=int, default=None)
            sp.add_argument("--out", default=None)
        if name == "simulate":
            sp.add_argument("--backend", choices=("direct", "surrogate", "rk4"), default="direct")
            sp.add_argument("--checkpoint", default=None)
        if name == "freq":
            sp.add_argument("--dataset", default=None, help="dataset CSV (default: both label variants of the pairs)")
        if name == "compare":
            sp.add_argument("--a", required=True, help="first checkpoint")
            sp.add_argument("--b", required=True, help="second checkpoint")
            sp.add_argument("--y0", default=None)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        set_threads(args.threads)
        if args.command == "simulate" and args.backend == "surrogate" and not args.checkpoint:
            raise UsageError("--backend surrogate needs --checkpoint")
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except (UsageError, ConfigError, InvalidNetwork, InvalidRange, FormatVersionMismatch, CorruptCheckpoint) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StiffscaleError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    finally:
        set_threads(None)


if __name__ == "__main__":
    sys.exit(main())
