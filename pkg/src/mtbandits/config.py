"""Typed experiment configuration and the config-file loader.

Config files are TOML trees (JSON also accepted); a run manifest embeds the
full config echo, so re-running from a manifest reproduces the original run
exactly.  Unknown keys are rejected rather than ignored, so typos fail fast
with exit code 1 at the CLI.
"""

from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "ConfigError",
    "PolicySettings",
    "SimilaritySettings",
    "EnvSettings",
    "RunSettings",
    "OutputSettings",
    "SweepSettings",
    "TheorySettings",
    "ExperimentConfig",
    "load_config",
]

KINDS = ("sim-sweep", "synthetic-bandit", "trace-bandit", "theory-checks", "similarity")


class ConfigError(Exception):
    """The configuration is malformed; the CLI maps this to exit code 1."""


def _take(d: Mapping[str, Any], section: str, allowed: set[str]) -> dict[str, Any]:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    return dict(d)


@dataclass(frozen=True)
class PolicySettings:
    beta: float = 1.0
    lam: float = 1.0
    engine: str = "inverse"
    refresh_every: int = 512
    kernel: dict | None = None  # KernelSpec dict; None -> median-heuristic gaussian

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PolicySettings":
        d = _take(d, "policy", {"beta", "lam", "engine", "refresh_every", "kernel"})
        if "kernel" in d and d["kernel"] is not None:
            d["kernel"] = _take(
                d["kernel"], "policy.kernel", {"family", "lengthscale", "output_scale"}
            )
        return cls(**d)


@dataclass(frozen=True)
class SimilaritySettings:
    method: str = "cke"
    warmup_rounds: int = 200
    cke_lam: float = 0.1
    r2_lam: float = 1.0
    r2_floor: float = -0.5
    file: str | None = None

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SimilaritySettings":
        d = _take(
            d,
            "similarity",
            {"method", "warmup_rounds", "cke_lam", "r2_lam", "r2_floor", "file"},
        )
        out = cls(**d)
        if out.method not in ("cke", "r2", "identity", "file"):
            raise ConfigError(f"unknown similarity method {out.method!r}")
        if out.method == "file" and not out.file:
            raise ConfigError("similarity method 'file' requires similarity.file")
        if out.warmup_rounds < 1:
            raise ConfigError("similarity.warmup_rounds must be >= 1")
        return out


@dataclass(frozen=True)
class EnvSettings:
    name: str = "synthetic"
    path: str | None = None
    k: int = 5
    bs_ids: tuple[str, ...] | None = None
    state_source: str = "replay"
    holdout_fraction: float = 0.25
    schema: dict | None = None

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EnvSettings":
        d = _take(
            d,
            "env",
            {"name", "path", "k", "bs_ids", "state_source", "holdout_fraction", "schema"},
        )
        if "bs_ids" in d and d["bs_ids"] is not None:
            d["bs_ids"] = tuple(str(b) for b in d["bs_ids"])
        out = cls(**d)
        if out.name not in ("synthetic", "trace"):
            raise ConfigError(f"unknown environment {out.name!r}")
        if out.name == "trace" and not out.path:
            raise ConfigError("trace environment requires env.path")
        return out


@dataclass(frozen=True)
class RunSettings:
    horizon: int = 1000
    tasks: int | None = None
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4, 5, 6, 7, 8, 9)
    mode: str = "parallel"

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunSettings":
        d = _take(d, "run", {"horizon", "tasks", "seeds", "mode"})
        if "seeds" in d:
            d["seeds"] = tuple(int(s) for s in d["seeds"])
        out = cls(**d)
        if out.horizon < 1:
            raise ConfigError("run.horizon must be >= 1")
        if not out.seeds:
            raise ConfigError("run.seeds must be non-empty")
        if out.mode not in ("parallel", "sequential"):
            raise ConfigError(f"unknown run mode {out.mode!r}")
        return out


@dataclass(frozen=True)
class OutputSettings:
    dir: str = "runs"
    format: str = "csv"

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "OutputSettings":
        d = _take(d, "output", {"dir", "format"})
        out = cls(**d)
        if out.format not in ("csv", "json"):
            raise ConfigError(f"unknown output format {out.format!r}")
        return out


@dataclass(frozen=True)
class SweepSettings:
    tasks: int = 2
    points: int = 100
    sim_ground: float = 0.8
    lengthscale: float = 0.5
    noise_var: float = 0.05
    train_size: int = 5
    seed: int = 0
    draws: int = 100
    grid_step: float = 0.01
    lam: float | None = None  # None: train with the generator's noise variance

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SweepSettings":
        d = _take(
            d,
            "sweep",
            {
                "tasks",
                "points",
                "sim_ground",
                "lengthscale",
                "noise_var",
                "train_size",
                "seed",
                "draws",
                "grid_step",
                "lam",
            },
        )
        out = cls(**d)
        if out.draws < 2:
            raise ConfigError("sweep.draws must be >= 2")
        if not 0 < out.grid_step <= 1:
            raise ConfigError("sweep.grid_step must be in (0, 1]")
        return out


@dataclass(frozen=True)
class TheorySettings:
    tasks: int = 3
    contexts: int = 21
    instances: int = 50
    mu_step: float = 0.1
    mu_sets: int = 20
    lam: float = 1.0
    seed: int = 0

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TheorySettings":
        d = _take(
            d,
            "theory",
            {"tasks", "contexts", "instances", "mu_step", "mu_sets", "lam", "seed"},
        )
        out = cls(**d)
        if out.instances < 1 or out.mu_sets < 1:
            raise ConfigError("theory.instances and theory.mu_sets must be >= 1")
        return out


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    policy: PolicySettings = field(default_factory=PolicySettings)
    similarity: SimilaritySettings = field(default_factory=SimilaritySettings)
    env: EnvSettings = field(default_factory=EnvSettings)
    run: RunSettings = field(default_factory=RunSettings)
    output: OutputSettings = field(default_factory=OutputSettings)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    theory: TheorySettings = field(default_factory=TheorySettings)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], kind: str | None = None) -> "ExperimentConfig":
        top = _take(
            d,
            "top level",
            {"kind", "policy", "similarity", "env", "run", "output", "sweep", "theory"},
        )
        file_kind = top.get("kind")
        if kind is None:
            kind = file_kind
        elif file_kind is not None and file_kind != kind:
            raise ConfigError(f"config declares kind {file_kind!r} but the command expects {kind!r}")
        if kind is None:
            raise ConfigError("config must declare a kind (or be run through a subcommand)")
        if kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {KINDS}")
        cfg = cls(
            kind=kind,
            policy=PolicySettings.from_dict(top.get("policy", {})),
            similarity=SimilaritySettings.from_dict(top.get("similarity", {})),
            env=EnvSettings.from_dict(top.get("env", {})),
            run=RunSettings.from_dict(top.get("run", {})),
            output=OutputSettings.from_dict(top.get("output", {})),
            sweep=SweepSettings.from_dict(top.get("sweep", {})),
            theory=TheorySettings.from_dict(top.get("theory", {})),
        )
        if kind == "trace-bandit" and cfg.env.name != "trace":
            cfg = replace(cfg, env=EnvSettings.from_dict({**top.get("env", {}), "name": "trace"}))
        return cfg

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["run"]["seeds"] = list(self.run.seeds)
        if self.env.bs_ids is not None:
            d["env"]["bs_ids"] = list(self.env.bs_ids)
        return d

    def with_overrides(
        self,
        seed: int | None = None,
        out_dir: str | None = None,
        out_format: str | None = None,
    ) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, run=replace(cfg.run, seeds=(int(seed),)))
        if out_dir is not None or out_format is not None:
            cfg = replace(
                cfg,
                output=OutputSettings(
                    dir=out_dir or cfg.output.dir, format=out_format or cfg.output.format
                ),
            )
        return cfg


def load_config(path, kind: str | None = None) -> ExperimentConfig:
    """Read a TOML config, a JSON config, or a run manifest (config echo)."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        if p.suffix == ".json":
            data = json.loads(p.read_text())
        else:
            with open(p, "rb") as fh:
                data = tomllib.load(fh)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"could not parse {p}: {exc}") from exc
    if "config" in data and isinstance(data["config"], dict):  # a manifest
        data = data["config"]
    return ExperimentConfig.from_dict(data, kind=kind)
