"""Run configuration: one TOML file aggregating every stage of the pipeline."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .freq import FreqConfig
from .integrator import SolverConfig
from .kinetics import ReactionNetwork
from .netfile import load_network
from .sampling import SamplingConfig
from .surrogate import TrainConfig
from .transforms import TransformSpec

BUILTIN_NETWORKS = {"rober": "rober.toml"}

_SECTIONS = {
    "run": {"seed", "output_dir", "network"},
    "sampling": {"n_initial", "y_ranges", "T_range", "rho_range", "n_evolution_steps", "evolution_dt"},
    "transform": {"lambda_a", "lambda_b", "dt", "label_transform"},
    "model": {"hidden"},
    "train": {"stage1_epochs", "stage1_batch", "stage1_lr", "stage2_epochs", "stage2_batch_multiplier",
              "stage2_lr", "beta1", "beta2", "eps", "train_fraction"},
    "solver": {"rel_tol", "abs_tol", "max_newton_iters", "initial_step", "max_step", "max_steps"},
    "sim": {"nx", "ny", "D", "bc", "dt", "n_steps", "snapshot_every", "safety", "normalize"},
    "freq": {"k0_min", "k0_max", "n_k0", "cap", "zscore_inputs"},
    "rollout": {"y0", "n_steps"},
}


@dataclass(frozen=True)
class SimSettings:
    nx: int = 64
    ny: int = 64
    D: tuple = (100.0, 0.5, 2.0)
    bc: str = "neumann"
    dt: float = 7e-7
    n_steps: int = 1000
    snapshot_every: int = 100
    safety: float = 1.0
    normalize: bool = True


@dataclass(frozen=True)
class RolloutSettings:
    y0: tuple = (1.0, 0.0, 0.0)
    n_steps: int = 1000


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: Path = Path("out")
    network: str = "rober"
    network_path: Path | None = None
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    transform: TransformSpec = field(default_factory=TransformSpec)
    hidden: tuple = (256, 128, 64)
    train: TrainConfig = field(default_factory=TrainConfig)
    train_fraction: float = 0.9
    solver: SolverConfig = field(default_factory=SolverConfig)
    sim: SimSettings = field(default_factory=SimSettings)
    freq: FreqConfig = field(default_factory=FreqConfig)
    rollout: RolloutSettings = field(default_factory=RolloutSettings)

    def load_network(self) -> ReactionNetwork:
        if self.network_path is not None:
            return load_network(self.network_path)
        with resources.as_file(resources.files("stiffscale") / "data" / BUILTIN_NETWORKS[self.network]) as p:
            return load_network(p)

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return str(v)
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, Path):
                return v.as_posix()
            return v

        t = self.transform
        return clean({
            "seed": self.seed,
            "output_dir": self.output_dir,
            "network": self.network,
            "network_path": self.network_path,
            "sampling": self.sampling.to_dict(),
            "transform": {"lambda_a": t.lambda_a, "lambda_b": t.lambda_b, "dt": t.dt,
                          "label_transform": t.label_transform},
            "hidden": list(self.hidden),
            "train": asdict(self.train),
            "train_fraction": self.train_fraction,
            "solver": asdict(self.solver),
            "sim": asdict(self.sim),
            "freq": self.freq.to_dict(),
            "rollout": asdict(self.rollout),
        })


def _default_sampling(seed: int) -> dict:
    return {"n_initial": 2000, "y_ranges": [[1e-10, 1.0], [1e-14, 1e-2], [1e-10, 1.0]],
            "n_evolution_steps": 10, "evolution_dt": 7e-7, "seed": seed}


def parse_config(data: dict, base_dir: Path = Path(".")) -> RunConfig:
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    for name, table in data.items():
        if not isinstance(table, dict):
            raise ConfigError(f"[{name}] must be a table")
        bad = set(table) - _SECTIONS[name]
        if bad:
            raise ConfigError(f"unknown key(s) in [{name}]: {sorted(bad)}")
    run = data.get("run", {})
    try:
        seed = int(run.get("seed", 0))
        out = Path(run.get("output_dir", "out"))
        if not out.is_absolute():
            out = base_dir / out
        network = str(run.get("network", "rober"))
        net_path = None
        if network not in BUILTIN_NETWORKS:
            net_path = Path(network)
            if not net_path.is_absolute():
                net_path = base_dir / net_path
            if not net_path.is_file():
                raise ConfigError(f"network file not found: {net_path}")

        samp = _default_sampling(seed)
        samp.update(data.get("sampling", {}))
        samp["seed"] = seed
        sampling = SamplingConfig(
            n_initial=int(samp["n_initial"]),
            y_ranges=tuple(samp["y_ranges"]),
            T_range=samp.get("T_range"),
            rho_range=samp.get("rho_range"),
            n_evolution_steps=int(samp["n_evolution_steps"]),
            evolution_dt=float(samp["evolution_dt"]),
            seed=seed,
        )
        tr = data.get("transform", {})
        transform = TransformSpec(
            lambda_a=float(tr.get("lambda_a", 0.1)),
            lambda_b=float(tr.get("lambda_b", 0.5)),
            dt=float(tr.get("dt", sampling.evolution_dt)),
            label_transform=str(tr.get("label_transform", "gbct")),
        )
        hidden = tuple(int(h) for h in data.get("model", {}).get("hidden", (256, 128, 64)))
        tdata = dict(data.get("train", {}))
        train_fraction = float(tdata.pop("train_fraction", 0.9))
        train = TrainConfig(**tdata, seed=seed)
        solver = SolverConfig(**data.get("solver", {}))
        sd = dict(data.get("sim", {}))
        if "D" in sd:
            sd["D"] = tuple(float(d) for d in sd["D"])
        sim = SimSettings(**sd)
        freq = FreqConfig(**data.get("freq", {}), seed=seed)
        rd = dict(data.get("rollout", {}))
        if "y0" in rd:
            rd["y0"] = tuple(float(v) for v in rd["y0"])
        rollout = RolloutSettings(**rd)
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    if not 0 < train_fraction < 1:
        raise ConfigError("train_fraction must be in (0, 1)")
    if not math.isclose(transform.dt, sampling.evolution_dt, rel_tol=1e-12):
        raise ConfigError("transform.dt must equal sampling.evolution_dt")
    return RunConfig(seed, out, network, net_path, sampling, transform, hidden, train, train_fraction,
                     solver, sim, freq, rollout)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data, path.parent)
