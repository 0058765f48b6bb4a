"""Run configuration: flat TOML files mirrored one-to-one by CLI flags."""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import DomainError
from .model import DncbParams, Hyperparams, ModelSpec

OUT_ENV = "DNCB_OUT"


@dataclass
class RunConfig:
    model: str = "td"
    C: int | None = None
    K: int | None = None
    eps1: float | None = None
    eps2: float | None = None
    col_rate: float = 1.0
    eta1: float = 1.0
    eta2: float = 1.0
    nu1: float = 1.0
    nu2: float = 1.0
    zeta1: float = 1.0
    zeta2: float = 1.0
    iterations: int = 1000
    burn_in: int = 500
    thin: int = 5
    chains: int = 1
    init: str = "prior"
    seed: int = 0
    heldout_fraction: float | None = None
    mask_seed: int | None = None
    data: str | None = None
    out: str = field(default_factory=lambda: os.environ.get(OUT_ENV, "."))

    def validate(self, need_eps: bool = True, need_dims: bool = True) -> "RunConfig":
        if self.model not in ("mf", "td"):
            raise DomainError(f"model must be 'mf' or 'td', got {self.model!r}")
        if need_eps and (self.eps1 is None or self.eps2 is None):
            raise DomainError("eps1 and eps2 are required (no default is assumed)")
        if need_dims:
            if self.K is None or self.K < 1:
                raise DomainError("K must be given and >= 1")
            if self.model == "td" and (self.C is None or self.C < 1):
                raise DomainError("C must be given and >= 1 for the td model")
        if not self.iterations > self.burn_in >= 0:
            raise DomainError("need iterations > burn_in >= 0")
        if self.thin < 1:
            raise DomainError("thin must be >= 1")
        if self.chains < 1:
            raise DomainError("chains must be >= 1")
        if self.heldout_fraction is not None and not 0 < self.heldout_fraction < 1:
            raise DomainError("heldout_fraction must lie in (0, 1)")
        return self

    @property
    def params(self) -> DncbParams:
        return DncbParams(self.eps1, self.eps2, self.col_rate)

    @property
    def hyper(self) -> Hyperparams:
        return Hyperparams(self.eta1, self.eta2, self.nu1, self.nu2, self.zeta1, self.zeta2)

    @property
    def spec(self) -> ModelSpec:
        return ModelSpec(self.model, self.K, self.params, self.hyper, self.C if self.model == "td" else None)


CONFIG_KEYS = {f.name for f in fields(RunConfig)}


def load_config_file(path) -> dict:
    """Read a flat TOML file; nested tables and unknown keys are rejected."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    out = {}
    for key, val in raw.items():
        norm = key.replace("-", "_")
        if isinstance(val, dict):
            raise DomainError(f"{path}: nested table [{key}] not allowed, use flat keys")
        if norm not in CONFIG_KEYS:
            raise DomainError(f"{path}: unknown key {key!r}")
        out[norm] = val
    return out


def build_config(file_values: dict | None = None, flag_values: dict | None = None) -> RunConfig:
    """Defaults, overridden by the config file, overridden by explicit flags (non-None)."""
    cfg = RunConfig()
    for source in (file_values or {}, flag_values or {}):
        for key, val in source.items():
            if key in CONFIG_KEYS and val is not None:
                setattr(cfg, key, val)
    cfg.out = str(Path(cfg.out))
    return cfg
