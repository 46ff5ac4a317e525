"""Run configuration: TOML sections [robots], [family], [rl] and [revolver]."""

from __future__ import annotations

import hashlib
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "ConfigError",
    "RobotsConfig",
    "FamilyConfig",
    "RlConfig",
    "TransferConfig",
    "RunConfig",
    "load_config",
    "parse_config",
]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RobotsConfig:
    source: str = "walker"
    target: str = "walker_long"


@dataclass(frozen=True)
class FamilyConfig:
    id: str = "chain-locomotion"
    reward_mode: str = "dense"
    horizon: int | None = None  # family default when unset
    fall_penalty: float = -10.0
    success_distance: float = 1.0

    def validate(self):
        if self.id not in ("chain-locomotion", "reach-grasp"):
            raise ConfigError(f"family.id: unknown family {self.id!r}")
        if self.reward_mode not in ("dense", "sparse"):
            raise ConfigError("family.reward_mode must be 'dense' or 'sparse'")
        if self.horizon is not None and self.horizon < 1:
            raise ConfigError("family.horizon must be >= 1")


# Per-family defaults for unset [rl] fields.
RL_FAMILY_DEFAULTS = {
    "chain-locomotion": {"hidden": (256, 256), "actor_lr": 3e-4, "batch_size": 256},
    "reach-grasp": {"hidden": (32, 32), "actor_lr": 1e-4, "batch_size": 16},
}


@dataclass(frozen=True)
class RlConfig:
    backend: str = "td3"
    hidden: tuple[int, ...] | None = None
    actor_lr: float | None = None
    critic_lr: float | None = None
    batch_size: int | None = None
    gamma: float = 0.99
    tau: float = 0.005
    policy_delay: int = 2
    exploration_noise: float = 0.1
    target_noise: float = 0.2
    noise_clip: float = 0.5
    buffer_capacity: int = 200_000
    warmup_steps: int = 1000
    sigma: float = 0.3
    baseline_lr: float = 3e-3
    baseline_epochs: int = 10
    episodes_per_epoch: int = 8
    pretrain_steps: int = 500_000
    pretrain_reward_mode: str = "dense"
    pretrain_actor_lr: float | None = None  # actor_lr when unset

    def resolved(self, family_id: str) -> "RlConfig":
        d = RL_FAMILY_DEFAULTS[family_id]
        return replace(
            self,
            hidden=tuple(self.hidden) if self.hidden is not None else d["hidden"],
            actor_lr=self.actor_lr if self.actor_lr is not None else d["actor_lr"],
            critic_lr=self.critic_lr if self.critic_lr is not None else (self.actor_lr or d["actor_lr"]),
            batch_size=self.batch_size if self.batch_size is not None else d["batch_size"],
        )

    def validate(self):
        if self.backend not in ("td3", "pg"):
            raise ConfigError(f"rl.backend must be 'td3' or 'pg', got {self.backend!r}")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("rl.gamma must lie in [0, 1)")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError("rl.tau must lie in [0, 1]")
        for name in ("policy_delay", "buffer_capacity", "episodes_per_epoch", "baseline_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"rl.{name} must be >= 1")
        if self.sigma <= 0:
            raise ConfigError("rl.sigma must be > 0")
        if self.hidden is not None and (not self.hidden or any(h < 1 for h in self.hidden)):
            raise ConfigError("rl.hidden must list positive layer widths")
        if self.pretrain_actor_lr is not None and not self.pretrain_actor_lr > 0:
            raise ConfigError("rl.pretrain_actor_lr must be > 0")
        if self.pretrain_reward_mode not in ("dense", "sparse"):
            raise ConfigError("rl.pretrain_reward_mode must be 'dense' or 'sparse'")


@dataclass(frozen=True)
class TransferConfig:
    """Hyperparameters of the evolution loop."""

    delta: float = 0.1
    step: float | tuple[float, ...] = 0.05
    shaping_h: float = 1.0
    epochs_per_phase: int = 20
    max_extensions: int = 5
    drop_threshold: float = 0.2
    success_floor: float = 0.3
    cache_size: int = 1000
    total_steps: int = 3_000_000
    eval_episodes: int = 20
    seed: int = 0
    backend: str = "td3"

    def step_at(self, phase: int) -> float:
        if isinstance(self.step, tuple):
            return self.step[min(phase, len(self.step) - 1)]
        return self.step

    def validate(self):
        if not self.delta > 0:
            raise ConfigError("revolver.delta must be > 0")
        steps = self.step if isinstance(self.step, tuple) else (self.step,)
        if not steps:
            raise ConfigError("revolver.step must not be empty")
        for s in steps:
            if not s > 0:
                raise ConfigError("step must be > 0")
            if not s < self.delta:
                raise ConfigError("step must be < delta")
        if self.shaping_h < 0:
            raise ConfigError("revolver.shaping_h must be >= 0")
        if self.epochs_per_phase < 0:
            raise ConfigError("revolver.epochs_per_phase must be >= 0")
        if self.max_extensions < 0:
            raise ConfigError("revolver.max_extensions must be >= 0")
        if not 0.0 <= self.drop_threshold <= 1.0:
            raise ConfigError("revolver.drop_threshold must lie in [0, 1]")
        if not 0.0 <= self.success_floor <= 1.0:
            raise ConfigError("revolver.success_floor must lie in [0, 1]")
        if self.cache_size < 2:
            raise ConfigError("revolver.cache_size must be >= 2")
        if self.total_steps < 0:
            raise ConfigError("revolver.total_steps must be >= 0")
        if self.eval_episodes < 1:
            raise ConfigError("revolver.eval_episodes must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    robots: RobotsConfig = field(default_factory=RobotsConfig)
    family: FamilyConfig = field(default_factory=FamilyConfig)
    rl: RlConfig = field(default_factory=RlConfig)
    revolver: TransferConfig = field(default_factory=TransferConfig)
    base_dir: Path | None = None
    digest: str = ""

    @property
    def rl_resolved(self) -> RlConfig:
        return self.rl.resolved(self.family.id)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d.pop("base_dir")
        d.pop("digest")
        return d

    def resolve_robot(self, name: str) -> str:
        """Asset name as is; relative file paths are taken against the config file."""
        p = Path(name)
        if self.base_dir is not None and (p.suffix or "/" in name) and not p.is_absolute():
            return str(self.base_dir / p)
        return name


_SECTIONS = {"robots": RobotsConfig, "family": FamilyConfig, "rl": RlConfig, "revolver": TransferConfig}


def _coerce(section: str, cls, values: dict) -> Any:
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    out = {}
    for k, v in values.items():
        if k in ("hidden", "step") and isinstance(v, list):
            v = tuple(v)
        out[k] = v
    try:
        return cls(**out)
    except TypeError as e:
        raise ConfigError(f"[{section}]: {e}") from None


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config parse error: {e}") from None
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    parts = {}
    for name, cls in _SECTIONS.items():
        section = data.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"[{name}] must be a table")
        parts[name] = _coerce(name, cls, section)
    rl = parts["rl"]
    revolver = parts["revolver"]
    if "backend" not in data.get("revolver", {}):
        revolver = replace(revolver, backend=rl.backend)
    elif "backend" in data.get("rl", {}) and rl.backend != revolver.backend:
        raise ConfigError("rl.backend and revolver.backend disagree")
    else:
        rl = replace(rl, backend=revolver.backend)
    cfg = RunConfig(
        parts["robots"], parts["family"], rl, revolver, base_dir,
        hashlib.sha256(text.encode("utf-8")).hexdigest(),
    )
    cfg.family.validate()
    cfg.rl.validate()
    cfg.revolver.validate()
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config(raw.decode("utf-8"), path.parent)
