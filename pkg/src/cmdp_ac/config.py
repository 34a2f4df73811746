"""Flat ``key = value`` experiment configuration."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


def _parse_bool(v: str) -> bool:
    if v.lower() in ("true", "yes", "1"):
        return True
    if v.lower() in ("false", "no", "0"):
        return False
    raise ValueError(v)


def _parse_ints(v: str) -> list[int]:
    return [int(x) for x in v.split(",") if x.strip()]


def _parse_floats(v: str) -> list[float]:
    return [float(x) for x in v.split(",") if x.strip()]


def _parse_stride(v: str) -> int | None:
    return None if v.strip().lower() == "never" else int(v)


def _fmt(v) -> str:
    if v is None:
        return "never"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


_PARSERS = {
    int: int, float: float, str: str, bool: _parse_bool,
    "ints": _parse_ints, "floats": _parse_floats, "stride": _parse_stride,
    "optfloat": lambda v: None if v.strip().lower() == "never" else float(v),
}

ENV_KEYS = ("map", "model", "random_cmdp")


def _f(default, kind=None, **kw):
    meta = {"kind": kind} if kind else {}
    if isinstance(default, list):
        return field(default_factory=lambda: list(default), metadata=meta)
    return field(default=default, metadata=meta)


@dataclass
class ExperimentConfig:
    """Every key the config file understands; unset keys keep these defaults.

    The environment comes from exactly one of ``map`` (a map file path or
    ``default`` for the shipped map), ``model`` (a JSON model file) or
    ``random_cmdp`` (``S, A, N`` of a seeded random CMDP).
    """

    map: str | None = None
    model: str | None = None
    random_cmdp: list[int] | None = _f(None, "ints")
    random_seed: int = 0
    min_transition_prob: float = 0.02
    slack_target: float = 0.1
    gamma: float = 0.9

    algorithm: str = "online"
    horizon: int = 200_000
    eta0: float = 10.0
    alpha0: float = 10.0
    beta0: float = 10.0
    eps0: float = 1.0
    eta: float | None = _f(None, "optfloat")
    alpha: float | None = _f(None, "optfloat")
    beta: float | None = _f(None, "optfloat")
    epsilon: float | None = _f(None, "optfloat")
    mu_floor: float | None = _f(None, "optfloat")
    seeds: list[int] = _f([0], "ints")
    record_stride: int = 1000
    gap_stride: int | None = _f(None, "stride")
    xi: float = 0.1
    warm_start: str = "none"
    trajectories_per_update: int = 5
    trajectory_length: int | None = _f(None, "stride")

    compute_optimum: bool = True
    compute_gaps: bool = True
    out_dir: str = "results"

    dual_step: float = 1.0
    dual_iters: int = 1000
    grid_resolution: float = 0.05

    lemma_trials: int = 100
    mixing_c: list[float] = _f([0.5, 0.25, 0.1, 0.01], "floats")
    mixing_k_max: int = 10_000
    mu_samples: int = 64
    nd_policies: int = 20
    nd_epsilon: float = 0.2

    explicit: list[str] = field(default_factory=list, repr=False, compare=False)
    source: str = field(default="<string>", repr=False, compare=False)

    def validate(self) -> "ExperimentConfig":
        given = [k for k in ENV_KEYS if getattr(self, k) is not None]
        if len(given) != 1:
            raise ConfigError(
                f"{self.source}: exactly one environment source required, got "
                + (", ".join(given) if given else "none") + f" (keys: {', '.join(ENV_KEYS)})")
        if self.random_cmdp is not None and len(self.random_cmdp) != 3:
            raise ConfigError(f"{self.source}: random_cmdp needs 'S, A, N'")
        if self.algorithm not in ("online", "batch"):
            raise ConfigError(f"{self.source}: algorithm must be online or batch")
        if self.warm_start not in ("none", "feasible"):
            raise ConfigError(f"{self.source}: warm_start must be none or feasible")
        if not self.seeds:
            raise ConfigError(f"{self.source}: seeds must be non-empty")
        if self.record_stride < 1 or (self.gap_stride is not None and self.gap_stride < 1):
            raise ConfigError(f"{self.source}: strides must be at least 1")
        if self.horizon < 0:
            raise ConfigError(f"{self.source}: horizon must be nonnegative")
        return self


_FIELDS = {f.name: f for f in fields(ExperimentConfig) if f.name not in ("explicit", "source")}


def _kind(f):
    kind = f.metadata.get("kind")
    if kind:
        return kind
    t = f.type if not isinstance(f.type, str) else f.type.split(" ")[0]
    return {"int": int, "float": float, "bool": bool}.get(t, str)


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    values, explicit, lines_of = {}, [], {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, _, value = (p.strip() for p in line.partition("="))
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in lines_of:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} "
                              f"(first set on line {lines_of[key]})")
        try:
            values[key] = _PARSERS[_kind(_FIELDS[key])](value)
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {value!r}") from None
        lines_of[key] = lineno
        explicit.append(key)
    return ExperimentConfig(**values, explicit=explicit, source=source).validate()


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(), source=str(path))


def serialize_config(cfg: ExperimentConfig) -> str:
    """Write back the explicitly set keys, in the order they were given."""
    keys = cfg.explicit or [k for k in _FIELDS if getattr(cfg, k) != _FIELDS[k].default]
    return "".join(f"{k} = {_fmt(getattr(cfg, k))}\n" for k in keys)
