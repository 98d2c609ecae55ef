"""Experiment configuration: a flat JSON schema with exact key checking.

The schema is the union of the ModelParams fields and the run plumbing
(grid size, path count, seed, optional one-dimensional sweep, output
directory, process logging, and an optional zero-noise sub-config for
the Picard verification).  Unknown keys are rejected so that typos fail
loudly; serialize(parse(text)) materializes every default.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

from .model import ModelParams

__all__ = ["ExperimentConfig", "ConfigError"]


class ConfigError(ValueError):
    pass


_MODEL_KEYS = tuple(f.name for f in fields(ModelParams))
_RUN_KEYS = ("n_steps", "n_paths", "seed", "sweep", "outputs",
             "log_processes", "picard_subconfig")
ALLOWED_KEYS = frozenset(_MODEL_KEYS + _RUN_KEYS)


@dataclass(frozen=True)
class ExperimentConfig:
    params: ModelParams = field(default_factory=ModelParams)
    n_steps: int = 10_000
    n_paths: int = 10_000
    seed: int = 0
    sweep: tuple | None = None  # ((parameter_name, (values...)), ...)
    outputs: str = "out"
    log_processes: tuple = ()
    picard_subconfig: dict | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - ALLOWED_KEYS
        if unknown:
            raise ConfigError("unknown config keys: %s" % sorted(unknown))
        model_kw = {}
        for k in _MODEL_KEYS:
            if k in d:
                v = d[k]
                if not isinstance(v, (int, float)) or isinstance(v, bool):
                    raise ConfigError("config key %r must be a number" % k)
                model_kw[k] = float(v)
        sweep = d.get("sweep")
        if sweep is not None:
            try:
                sweep = tuple((str(name), tuple(float(v) for v in values))
                              for name, values in sweep)
            except (TypeError, ValueError) as e:
                raise ConfigError("sweep must be a list of "
                                  "[parameter_name, [values...]] pairs") from e
            for name, _ in sweep:
                if name not in _MODEL_KEYS:
                    raise ConfigError("sweep parameter %r is not a model "
                                      "parameter" % name)
        picard = d.get("picard_subconfig")
        if picard is not None:
            if not isinstance(picard, dict):
                raise ConfigError("picard_subconfig must be an object")
            bad = set(picard) - set(_MODEL_KEYS) - {"n_steps", "tol"}
            if bad:
                raise ConfigError("unknown picard_subconfig keys: %s"
                                  % sorted(bad))
        log = tuple(d.get("log_processes", ()))
        try:
            n_steps = int(d.get("n_steps", 10_000))
            n_paths = int(d.get("n_paths", 10_000))
            seed = int(d.get("seed", 0))
        except (TypeError, ValueError) as e:
            raise ConfigError("n_steps, n_paths, seed must be integers") from e
        if n_steps < 1 or n_paths < 1:
            raise ConfigError("n_steps and n_paths must be positive")
        return cls(params=ModelParams(**model_kw), n_steps=n_steps,
                   n_paths=n_paths, seed=seed, sweep=sweep,
                   outputs=str(d.get("outputs", "out")), log_processes=log,
                   picard_subconfig=picard)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError("invalid JSON: %s" % e) from e
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as f:
            return cls.from_json(f.read())

    def to_dict(self) -> dict:
        d = {k: getattr(self.params, k) for k in _MODEL_KEYS}
        d["n_steps"] = self.n_steps
        d["n_paths"] = self.n_paths
        d["seed"] = self.seed
        d["sweep"] = ([[name, list(values)] for name, values in self.sweep]
                      if self.sweep is not None else None)
        d["outputs"] = self.outputs
        d["log_processes"] = list(self.log_processes)
        d["picard_subconfig"] = self.picard_subconfig
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def replace(self, **kw) -> "ExperimentConfig":
        """Return a copy with flat keys (model or run) overridden."""
        d = self.to_dict()
        d.update(kw)
        return ExperimentConfig.from_dict(d)
