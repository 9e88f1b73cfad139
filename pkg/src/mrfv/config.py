"""Flat key-value run configuration.

Config files are plain text, one `key value` (or `key = value`) pair per
line, `#` comments allowed.  Command-line flags override file values.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .presets import PRESETS


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    example: str = "example1"
    level: int | None = None
    epsilon_ref: float | None = None
    cfl: float | None = None
    mode: str | None = None          # "global" | "local"
    t_end: float | None = None
    seed: int = 0
    chemo_sign: str = "corrected"
    detail_norm: str = "minmax"
    adapt: bool = True
    adapt_every: int = 1
    nu: float | None = None          # chemotaxis sensitivity override
    snapshots: tuple = ()
    out: str | None = None

    def validate(self) -> "RunConfig":
        if self.example not in PRESETS:
            raise ConfigError(f"unknown example {self.example!r}")
        if self.level is not None and not (1 <= self.level <= 12):
            raise ConfigError(f"level {self.level} out of range [1, 12]")
        if self.mode not in (None, "global", "local"):
            raise ConfigError(f"mode must be 'global' or 'local', got {self.mode!r}")
        if self.cfl is not None and self.cfl <= 0:
            raise ConfigError("cfl must be positive")
        if self.epsilon_ref is not None and self.epsilon_ref <= 0:
            raise ConfigError("epsilon_ref must be positive")
        if self.t_end is not None and self.t_end < 0:
            raise ConfigError("t_end must be nonnegative")
        if self.chemo_sign not in ("corrected", "printed"):
            raise ConfigError(f"chemo_sign must be 'corrected' or 'printed'")
        if self.detail_norm not in ("minmax", "euclidean"):
            raise ConfigError("detail_norm must be 'minmax' or 'euclidean'")
        if self.adapt_every < 1:
            raise ConfigError("adapt_every must be >= 1")
        return self


_BOOL = {"true": True, "1": True, "yes": True,
         "false": False, "0": False, "no": False}


def parse_config_text(text: str) -> dict:
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace("=", " ", 1).split(None, 1)
        if len(parts) != 2:
            raise ConfigError(f"line {lineno}: expected 'key value', got {raw!r}")
        out[parts[0]] = parts[1].strip()
    return out


def config_from_mapping(kv: dict) -> RunConfig:
    cfg = RunConfig()
    typed = {f.name: f for f in fields(RunConfig)}
    for key, sval in kv.items():
        if key not in typed:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            if key in ("level", "seed", "adapt_every"):
                val = int(sval)
            elif key in ("epsilon_ref", "cfl", "t_end", "nu"):
                val = float(sval)
            elif key == "adapt":
                val = _BOOL[str(sval).lower()]
            elif key == "snapshots":
                val = tuple(float(x) for x in str(sval).replace(",", " ").split())
            else:
                val = str(sval)
        except (ValueError, KeyError) as e:
            raise ConfigError(f"bad value for {key!r}: {sval!r}") from e
        setattr(cfg, key, val)
    return cfg.validate()


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return config_from_mapping(parse_config_text(fh.read()))
