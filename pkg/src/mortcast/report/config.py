"""Run configuration: one JSON document per experiment."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..data_ingest import Subpopulation, all_subpopulations

SEED_ENV = "MORTCAST_SEED"
MODELS = ("lc", "apc", "tree", "rf", "gbm", "gam-pooled", "gam-continentwise", "gam-single")
ML_MODELS = ("tree", "rf", "gbm")
GAM_GROUPING = {"gam-pooled": "pooled-all", "gam-continentwise": "continentwise", "gam-single": "single-subpop"}


class ConfigError(ValueError):
    pass


def _window(value, name):
    if value is None:
        return None
    try:
        lo, hi = (int(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a [start, end] pair, got {value!r}") from None
    if hi < lo:
        raise ConfigError(f"{name} ends before it starts: {value!r}")
    return (lo, hi)


@dataclass
class RunConfig:
    """Everything a run needs; unknown keys are rejected.

    Data come either from ``tensor`` (canonical CSV) or from ``hmd_dir``
    plus an optional ``stmf`` file. ``tree``, ``forest``, ``gbm`` and
    ``gam`` hold keyword overrides for the respective parameter classes.
    """

    output_dir: str
    hmd_dir: str | None = None
    stmf: str | None = None
    tensor: str | None = None
    subpops: list[str] | None = None
    models: list[str] = field(default_factory=lambda: ["lc", "tree", "rf", "gbm"])
    train: tuple[int, int] = (1950, 2010)
    test: tuple[int, int] | None = None
    year_range: tuple[int, int] | None = None
    tree: dict = field(default_factory=dict)
    forest: dict = field(default_factory=dict)
    gbm: dict = field(default_factory=dict)
    gam: dict = field(default_factory=dict)
    scenario: dict = field(default_factory=dict)
    figures: bool = True
    seed: int = 0

    def __post_init__(self):
        self.train = _window(self.train, "train")
        self.test = _window(self.test, "test")
        self.year_range = _window(self.year_range, "year_range")
        self.models = list(self.models)
        self.seed = int(self.seed)

    @property
    def subpopulations(self) -> list[Subpopulation]:
        if self.subpops is None:
            return all_subpopulations()
        try:
            return [Subpopulation.parse(s) for s in self.subpops]
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"bad subpopulation label: {exc}") from None

    def validate(self) -> "RunConfig":
        unknown = [m for m in self.models if m not in MODELS]
        if unknown:
            raise ConfigError(f"unknown models {unknown}; choose from {MODELS}")
        if any(m in ML_MODELS for m in self.models) and "lc" not in self.models:
            raise ConfigError("tree/rf/gbm improve a Lee-Carter baseline; add 'lc' to models")
        if self.tensor is None and self.hmd_dir is None:
            raise ConfigError("need either 'tensor' or 'hmd_dir'")
        if self.test is not None:
            if self.test[0] <= self.train[1]:
                raise ConfigError(f"test window {self.test} must follow train window {self.train}")
        self.subpopulations  # noqa: B018 - raises on bad labels
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("train", "test", "year_range"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict, env: dict | None = None) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        extra = sorted(set(d) - names)
        if extra:
            raise ConfigError(f"unknown config keys: {extra}")
        if "output_dir" not in d:
            raise ConfigError("config needs 'output_dir'")
        cfg = cls(**d)
        env = os.environ if env is None else env
        if env.get(SEED_ENV):
            try:
                cfg.seed = int(env[SEED_ENV])
            except ValueError:
                raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
        return cfg

    @classmethod
    def from_json(cls, path, overrides: dict | None = None, env: dict | None = None) -> "RunConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be an object")
        d.update(overrides or {})
        # relative data paths are resolved against the config file's directory
        for key in ("hmd_dir", "stmf", "tensor"):
            if d.get(key) and not Path(d[key]).is_absolute():
                d[key] = str((path.parent / d[key]).resolve())
        return cls.from_dict(d, env)
