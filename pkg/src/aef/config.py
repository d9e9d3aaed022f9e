"""Run configuration: a single versioned JSON document carrying the plant,
environment, agent hyperparameters, dataset source, and seeds.

Exactly one of ``dataset_path`` / ``synthetic`` must be present; the
synthetic branch regenerates the dataset deterministically from its seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .agents import AGENT_KINDS, AgentHyper, default_hyper, hyper_from_dict
from .circuit import ComponentSet, OpAmpModel
from .env import EnvConfig
from .signal import EmiDataset, SyntheticProfile, generate_synthetic_dataset, load_dataset

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass(frozen=True)
class EnvParams:
    """EnvConfig fields minus the plant and dataset objects."""

    tau_emi: float = 15.0
    c_min: float = 10e-12
    c_max: float = 500e-9
    delta_set: tuple[float, ...] = (-10e-9, -5e-9, 0.0, 5e-9, 10e-9)
    max_steps: int = 6000
    penalty: float = -15.0
    sample_rate: float = 1.28e6
    fft_size: int = 4096
    harmonics: int = 3
    harmonic_decay: float = 1.0
    synthesis_seed: int = 0
    amplitude_basis: str = "peak"
    random_phase: bool = True
    injection_q: float | None = None
    success_hold: int | None = 10
    emi_mode: str = "max"
    obs_bins: int = 40


@dataclass(frozen=True)
class SyntheticSource:
    profile: SyntheticProfile
    seed: int = 0
    name: str = "synthetic"


@dataclass(frozen=True)
class RunConfig:
    components: ComponentSet = field(default_factory=ComponentSet)
    opamp: OpAmpModel = field(default_factory=OpAmpModel)
    env: EnvParams = field(default_factory=EnvParams)
    agent_kind: str = "eqrl"
    hyper: AgentHyper | None = None
    dataset_path: str | None = None
    synthetic: SyntheticSource | None = None
    seeds: tuple[int, ...] = (0,)
    output_dir: str = "runs"

    def __post_init__(self) -> None:
        if (self.dataset_path is None) == (self.synthetic is None):
            raise ConfigError("exactly one of dataset_path / synthetic must be set")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.agent_kind not in AGENT_KINDS:
            raise ConfigError(f"unknown agent kind {self.agent_kind!r}")

    def resolved_hyper(self) -> AgentHyper:
        return self.hyper if self.hyper is not None else default_hyper(self.agent_kind)

    def resolve_dataset(self) -> EmiDataset:
        if self.dataset_path is not None:
            return load_dataset(self.dataset_path)
        assert self.synthetic is not None
        return generate_synthetic_dataset(
            self.synthetic.profile, self.synthetic.seed, name=self.synthetic.name
        )

    def env_config(self, dataset: EmiDataset | None = None) -> EnvConfig:
        ds = dataset if dataset is not None else self.resolve_dataset()
        p = self.env
        return EnvConfig(
            components=self.components,
            opamp=self.opamp,
            dataset=ds,
            tau_emi=p.tau_emi,
            c_min=p.c_min,
            c_max=p.c_max,
            delta_set=p.delta_set,
            max_steps=p.max_steps,
            penalty=p.penalty,
            sample_rate=p.sample_rate,
            fft_size=p.fft_size,
            harmonics=p.harmonics,
            harmonic_decay=p.harmonic_decay,
            synthesis_seed=p.synthesis_seed,
            amplitude_basis=p.amplitude_basis,
            random_phase=p.random_phase,
            injection_q=p.injection_q,
            success_hold=p.success_hold,
            emi_mode=p.emi_mode,
            obs_bins=p.obs_bins,
        )


def run_config_to_dict(cfg: RunConfig) -> dict:
    data = {
        "version": CONFIG_VERSION,
        "components": dict(cfg.components.__dict__),
        "opamp": dict(cfg.opamp.__dict__),
        "env": {**asdict(cfg.env), "delta_set": list(cfg.env.delta_set)},
        "agent": {"kind": cfg.agent_kind, "hyper": _hyper_to_dict(cfg.resolved_hyper())},
        "seeds": list(cfg.seeds),
        "output_dir": cfg.output_dir,
    }
    if cfg.dataset_path is not None:
        data["dataset"] = {"path": cfg.dataset_path}
    else:
        assert cfg.synthetic is not None
        data["dataset"] = {
            "synthetic": {
                **asdict(cfg.synthetic.profile),
                "seed": cfg.synthetic.seed,
                "name": cfg.synthetic.name,
            }
        }
    return data


def _hyper_to_dict(h: AgentHyper) -> dict:
    d = asdict(h)
    for key in ("encoder_hidden", "decoder_hidden", "q_hidden", "dqn_hidden", "emi_clip"):
        d[key] = list(d[key])
    return d


def run_config_from_dict(data: dict) -> RunConfig:
    if data.get("version") != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {data.get('version')!r}")
    try:
        components = ComponentSet(**data["components"])
        opamp = OpAmpModel(**data["opamp"])
        env_data = dict(data["env"])
        env_data["delta_set"] = tuple(env_data["delta_set"])
        env = EnvParams(**env_data)
        agent = data["agent"]
        hyper = hyper_from_dict(agent["hyper"]) if "hyper" in agent else None
        ds = data["dataset"]
        dataset_path = ds.get("path")
        synthetic = None
        if "synthetic" in ds:
            s = dict(ds["synthetic"])
            seed = s.pop("seed", 0)
            name = s.pop("name", "synthetic")
            synthetic = SyntheticSource(SyntheticProfile(**s), seed, name)
        return RunConfig(
            components=components,
            opamp=opamp,
            env=env,
            agent_kind=agent["kind"],
            hyper=hyper,
            dataset_path=dataset_path,
            synthetic=synthetic,
            seeds=tuple(int(s) for s in data["seeds"]),
            output_dir=data.get("output_dir", "runs"),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed config: {exc}") from exc


def load_run_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return run_config_from_dict(json.load(fh))


def save_run_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(run_config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def dump_run_config(cfg: RunConfig) -> str:
    return json.dumps(run_config_to_dict(cfg), indent=2, sort_keys=True)
