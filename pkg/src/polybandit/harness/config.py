"""Experiment configuration: a YAML document with three sections.

    environment:
      kind: EV            # EV LR SYM ASYM POLY-LOWRANK POLY-QUX HARDCASE QMDP
      d: 16
      k: 2
      p: 2
      spectrum: [1.0, 0.25]
      sigma: 0.1
      instance_seed: 7    # optional, defaults to the run seed
      H: 3                # QMDP only
      alpha_star: [0, 3, 5]   # HARDCASE only, optional
    algorithm:
      id: npm-etc
      constants: {C_n: 1.0, C_m: 0.5, C_L: 0.5, C_S: 1.0}
      params: {delta: 0.1}
    horizon: 65536
    seeds: [0, 1, 2]
    output: traces/npm.csv     # optional; {seed} is substituted

Unknown keys anywhere are errors.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import yaml

from ..constants import Constants
from ..env import KINDS, ModelError, RewardModel, make_random_model


class ConfigError(ValueError):
    pass


ENV_KEYS = {"kind", "d", "k", "p", "spectrum", "sigma", "instance_seed", "H", "alpha_star", "shift_psd"}
ALG_KEYS = {"id", "constants", "params"}
TOP_KEYS = {"environment", "algorithm", "horizon", "seeds", "output"}


@dataclass
class EnvSpec:
    kind: str
    d: int
    k: int = 1
    p: int = 2
    spectrum: Optional[list] = None
    sigma: float = 1.0
    instance_seed: Optional[int] = None
    H: int = 1
    alpha_star: Optional[list] = None
    shift_psd: bool = False

    def build(self, seed: int):
        """The RewardModel for this run (QMDP builds elsewhere)."""
        s = self.instance_seed if self.instance_seed is not None else seed
        if self.kind == "HARDCASE" and self.alpha_star is not None:
            return RewardModel("HARDCASE", self.d, 1, self.p, np.array([1.0]),
                               alpha_star=tuple(self.alpha_star), seed=s)
        model = make_random_model(self.kind, self.d, self.k, self.p, self.spectrum, seed=s)
        if self.shift_psd:
            from ..spectral import shift_psd
            model = shift_psd(model)
        return model


@dataclass
class ExperimentConfig:
    environment: EnvSpec
    algorithm: str
    constants: Constants = field(default_factory=Constants)
    params: dict = field(default_factory=dict)
    horizon: int = 10000
    seeds: list = field(default_factory=lambda: [0])
    output: Optional[str] = None

    def as_dict(self) -> dict:
        env = {k: v for k, v in vars(self.environment).items() if v is not None}
        return {
            "environment": env,
            "algorithm": {"id": self.algorithm, "constants": self.constants.as_dict(),
                          "params": dict(self.params)},
            "horizon": self.horizon,
            "seeds": list(self.seeds),
            **({"output": self.output} if self.output else {}),
        }

    def replace(self, **changes) -> "ExperimentConfig":
        doc = self.as_dict()
        for key, val in changes.items():
            node = doc
            parts = key.split(".")
            for p in parts[:-1]:
                node = node.setdefault(p, {})
            node[parts[-1]] = val
        return parse_config(doc)


def _check_keys(section: str, got: dict, allowed: set):
    if not isinstance(got, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    bad = set(got) - allowed
    if bad:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(bad)}")


def parse_config(doc: dict) -> ExperimentConfig:
    from .runners import ALGORITHMS

    doc = copy.deepcopy(doc)
    _check_keys("top level", doc, TOP_KEYS)
    for req in ("environment", "algorithm"):
        if req not in doc:
            raise ConfigError(f"missing section {req!r}")
    env = doc["environment"]
    _check_keys("environment", env, ENV_KEYS)
    if "kind" not in env or "d" not in env:
        raise ConfigError("environment needs kind and d")
    try:
        env_spec = EnvSpec(**env)
    except TypeError as e:
        raise ConfigError(str(e)) from None
    if env_spec.kind not in KINDS + ("QMDP",):
        raise ConfigError(f"unknown environment kind {env_spec.kind!r}")
    if env_spec.sigma < 0:
        raise ConfigError("sigma must be nonnegative")
    alg = doc["algorithm"]
    _check_keys("algorithm", alg, ALG_KEYS)
    aid = alg.get("id")
    if aid not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {aid!r}; known: {sorted(ALGORITHMS)}")
    entry = ALGORITHMS[aid]
    try:
        constants = Constants.from_dict(alg.get("constants"))
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"constants: {e}") from None
    params = alg.get("params") or {}
    _check_keys(f"algorithm.params ({aid})", params, set(entry.defaults))
    merged = dict(entry.defaults)
    merged.update(params)
    if env_spec.kind not in entry.kinds:
        raise ConfigError(f"{aid} runs on {sorted(entry.kinds)}, not {env_spec.kind}")
    horizon = int(doc.get("horizon", 10000))
    if horizon < 1:
        raise ConfigError("horizon must be positive")
    seeds = doc.get("seeds", [0])
    if isinstance(seeds, int):
        seeds = list(range(seeds))
    if not seeds or any((not isinstance(s, int)) or s < 0 for s in seeds):
        raise ConfigError("seeds must be a nonempty list of nonnegative integers")
    cfg = ExperimentConfig(env_spec, aid, constants, merged, horizon, list(seeds), doc.get("output"))
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig):
    """Build the instance for the first seed so model preconditions fail before any pull."""
    env_spec = cfg.environment
    if env_spec.kind == "QMDP":
        if not 1 <= env_spec.k <= env_spec.d or env_spec.H < 1:
            raise ConfigError("QMDP needs 1 <= k <= d and H >= 1")
        return
    try:
        env_spec.build(cfg.seeds[0])
    except (ModelError, ValueError) as e:
        raise ConfigError(f"environment: {e}") from None


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read {path}: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    return parse_config(doc)
