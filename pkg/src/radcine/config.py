"""Pipeline configuration and its flat ``key = value`` file format.

A config file holds one setting per line, sections separated by dots::

    # 20 cardiac phases, three acceleration factors
    T = 20
    R = 4, 6, 8
    phantom.noise_sigma = 0.05
    compression.method = svd
    recon.methods = gridding, igrasp, unrolled

Values are read as JSON scalars when possible, comma-separated values
become lists and anything else is a string. A file whose first
non-blank character is ``{`` is parsed as nested JSON instead.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .phantom import PhantomConfig

COMPRESSION_METHODS = ("soc", "svd", "removal")
RECON_METHODS = ("gridding", "igrasp", "unrolled")
PROX_CHOICES = ("identity", "tv", "resnet")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CompressionConfig:
    """`method` feeds the reconstructions; `compare` lists the methods whose
    gridding recons are scored with the streak-artifact ratio."""

    method: str = "svd"
    n_virtual: int = 6
    rho_s: float = 0.5
    rho_i: float = 0.75
    compare: tuple = COMPRESSION_METHODS
    removal_rel_threshold: float = 1.5


@dataclass(frozen=True)
class ReconConfig:
    methods: tuple = RECON_METHODS
    prox: str = "tv"
    lam: float = 0.5
    tau: float = 0.1
    K: int = 6
    n_cg: int = 10
    n_iter: int = 30
    lam_t_rel: float = 0.02
    weight_file: Optional[str] = None
    alpha: float = 2.0
    width: int = 6


@dataclass(frozen=True)
class PipelineConfig:
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    T: int = 20
    keep_fraction: float = 0.5
    R: tuple = (4, 6, 8)
    seed: int = 0
    noise_samples: int = 20000
    out: str = "run"
    compression: CompressionConfig = field(default_factory=CompressionConfig)
    recon: ReconConfig = field(default_factory=ReconConfig)

    def validate(self) -> "PipelineConfig":
        """Raise ConfigError on the first invalid setting, return self otherwise."""
        if int(self.T) < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if not self.R:
            raise ConfigError("R list is empty")
        if any(r < 1 for r in self.R):
            raise ConfigError(f"R values must be >= 1, got {list(self.R)}")
        if not 0 < self.keep_fraction <= 1:
            raise ConfigError(f"keep_fraction must lie in (0, 1], got {self.keep_fraction}")
        if self.noise_samples < 1:
            raise ConfigError("noise_samples must be >= 1")
        c, r = self.compression, self.recon
        for m in (c.method,) + tuple(c.compare):
            if m not in COMPRESSION_METHODS:
                raise ConfigError(f"unknown compression method {m!r}")
        if not 1 <= c.n_virtual <= self.phantom.n_coils:
            raise ConfigError(f"compression.n_virtual must lie in [1, {self.phantom.n_coils}]")
        if not 0 < c.rho_s < c.rho_i <= 1:
            raise ConfigError("need 0 < compression.rho_s < compression.rho_i <= 1")
        for m in r.methods:
            if m not in RECON_METHODS:
                raise ConfigError(f"unknown recon method {m!r}")
        if r.prox not in PROX_CHOICES:
            raise ConfigError(f"unknown prox {r.prox!r}")
        if r.prox == "resnet" and "unrolled" in r.methods:
            if not r.weight_file:
                raise ConfigError("recon.prox = resnet needs recon.weight_file")
            if not Path(r.weight_file).is_file():
                raise ConfigError(f"weight file not found: {r.weight_file}")
        if r.K < 1 or r.n_cg < 1 or r.n_iter < 1:
            raise ConfigError("recon.K, recon.n_cg and recon.n_iter must be >= 1")
        if r.lam <= 0 or r.tau < 0 or r.lam_t_rel < 0:
            raise ConfigError("need recon.lam > 0, recon.tau >= 0, recon.lam_t_rel >= 0")
        try:
            self.phantom.validate()
        except ValueError as e:
            raise ConfigError(f"phantom: {e}") from None
        return self

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for name, sub in (("phantom", PhantomConfig), ("compression", CompressionConfig),
                          ("recon", ReconConfig)):
            if name in d:
                kw[name] = _build(sub, d.pop(name), name)
        kw.update(_coerce(cls, d, ""))
        return cls(**kw)


def _build(cls, d, prefix):
    if not isinstance(d, dict):
        raise ConfigError(f"{prefix} must be a section")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(prefix + '.' + k for k in unknown)}")
    return cls(**_coerce(cls, d, prefix + "."))


def _coerce(cls, d, prefix):
    """Lists to tuples, scalars to one-element tuples where the default is a tuple."""
    defaults = {f.name: f.default for f in dataclasses.fields(cls)}
    out = {}
    for k, v in d.items():
        dflt = defaults.get(k)
        if isinstance(dflt, tuple):
            v = tuple(v) if isinstance(v, (list, tuple)) else (v,)
        elif isinstance(v, list):
            raise ConfigError(f"{prefix}{k} takes a single value")
        out[k] = v
    return out


def parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if "," in text:
        return [parse_value(p) for p in text.split(",") if p.strip()]
    if text.lower() in ("none", "null", ""):
        return None
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def set_dotted(d: dict, key: str, value) -> None:
    parts = key.strip().split(".")
    for p in parts[:-1]:
        d = d.setdefault(p, {})
        if not isinstance(d, dict):
            raise ConfigError(f"{key}: {p} is not a section")
    d[parts[-1]] = value


def parse_flat(text: str) -> dict:
    d: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        set_dotted(d, key, parse_value(value))
    return d


def dump_flat(cfg: PipelineConfig) -> str:
    lines = []

    def walk(prefix, d):
        for k, v in d.items():
            if isinstance(v, dict):
                walk(prefix + k + ".", v)
            else:
                if isinstance(v, list):
                    v = ", ".join(json.dumps(x) for x in v)
                else:
                    v = json.dumps(v)
                lines.append(f"{prefix}{k} = {v}")
    walk("", cfg.to_dict())
    return "\n".join(lines) + "\n"


def load_config(path=None, overrides=()) -> PipelineConfig:
    """Read a flat or JSON config file (or defaults), then apply ``key=value`` overrides."""
    d: dict = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        if text.lstrip().startswith("{"):
            try:
                d = json.loads(text)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: {e}") from None
        else:
            d = parse_flat(text)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        set_dotted(d, k, parse_value(v))
    return PipelineConfig.from_dict(d)
