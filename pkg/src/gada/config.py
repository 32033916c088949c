"""Run configuration: flat ``key = value`` text files.

Blank lines and lines starting with ``#`` are ignored. Keys prefixed with
``scenario.`` override fields of the generator config of a named scenario,
e.g. ``scenario.noise = 3.0``. A file written by ``RunConfig.to_text``
parses back to the same config, so a run manifest doubles as a config.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .synth import ScenarioConfig
from .training import TrainConfig

SEED_LIMIT = 2**64


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    scenario: str = "imbalanced-source-10"  # standard name or scenario directory
    seed: int | None = None
    out: str | None = None
    steps: int = 2000
    lambda1: float = 2.0
    lambda2: float = 3.2
    lambda3: float = 4.0
    gamma: float = 0.7
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 16
    full_batch_size: int = 32
    eval_interval: int = 200
    d_local: int = 32
    d_sem: int = 16
    hgr_layers: int = 1
    use_hgr: bool = True
    detach_attention: bool = True
    eta_max: float = 0.02
    warmup_frac: float = 0.1
    scenario_overrides: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.seed is None:
            raise ConfigError("seed is required (set seed = N in the config or pass --seed)")
        if not 0 <= self.seed < SEED_LIMIT:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        try:
            self.train_config().validate()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        for name in ("steps", "batch_size", "full_batch_size", "eval_interval", "d_local", "d_sem"):
            if getattr(self, name) < (0 if name == "steps" else 1):
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")

    def train_config(self) -> TrainConfig:
        kw = {f.name: getattr(self, f.name) for f in fields(TrainConfig)}
        return TrainConfig(**kw)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            if f.name == "scenario_overrides":
                continue
            value = getattr(self, f.name)
            if value is not None:
                lines.append(f"{f.name} = {_format(value)}")
        for key in sorted(self.scenario_overrides):
            lines.append(f"scenario.{key} = {_format(self.scenario_overrides[key])}")
        return "\n".join(lines) + "\n"


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(map(str, value))
    return repr(value) if isinstance(value, float) else str(value)


def _coerce(raw: str, default, key: str):
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError(f"expected true or false for {key}, got {raw!r}")
    if isinstance(default, tuple):
        return tuple(int(v) for v in raw.split(",") if v.strip())
    if isinstance(default, int) or key == "seed":
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


_RUN_FIELDS = {f.name: f for f in fields(RunConfig) if f.name != "scenario_overrides"}
_SCENARIO_FIELDS = {f.name: f for f in fields(ScenarioConfig) if f.name not in ("seed", "name")}


def parse_config(text: str, origin: str = "<config>") -> RunConfig:
    cfg = RunConfig()
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        where = f"{origin}:{lineno}"
        if "=" not in stripped:
            raise ConfigError(f"{where}: expected key = value, got {stripped!r}")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        if key in seen:
            raise ConfigError(f"{where}: duplicate key {key!r} (first set on line {seen[key]})")
        seen[key] = lineno
        try:
            if key.startswith("scenario."):
                sub = key.split(".", 1)[1]
                if sub not in _SCENARIO_FIELDS:
                    raise ConfigError(f"{where}: unknown scenario key {sub!r}; valid: {', '.join(_SCENARIO_FIELDS)}")
                cfg.scenario_overrides[sub] = _coerce(raw, _SCENARIO_FIELDS[sub].default, key)
            elif key in _RUN_FIELDS:
                setattr(cfg, key, _coerce(raw, _RUN_FIELDS[key].default, key))
            else:
                raise ConfigError(f"{where}: unknown key {key!r}; valid: {', '.join(_RUN_FIELDS)}, scenario.*")
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"{where}: bad value for {key!r}: {e}") from None
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e.strerror}") from None
    return parse_config(text, str(p))


def with_overrides(cfg: RunConfig, **kw) -> RunConfig:
    """Copy of ``cfg`` with the non-None keyword values applied."""
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
