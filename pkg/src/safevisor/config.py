"""JSON experiment configuration.

Example::

    {
      "model": {"preset": "temperature"},
      "abstraction": {"delta_x": 0.001, "delta_u": 0.024, "truncation_sigmas": 6},
      "synthesis": {"rho": 0.01, "max_horizon": 100000},
      "simulation": {"controller": {"kind": "constant_zero"}, "x0": 19.01,
                     "n_trials": 100000, "seed": 0, "workers": 1, "mode": "supervised"},
      "output": {"artifact": "temperature.svmdp", "report": "report.json", "csv": null}
    }

A longhand model block gives ``p0, p1, q0, q1``, ``noise_variance`` or
``noise_std``, ``safe_set: [lo, hi]`` and ``inputs`` as either
``{"interval": [lo, hi]}`` or ``{"values": [...]}``. A preset block may
override any keyword of the preset factory, e.g. ``{"preset": "temperature",
"beta": 0.03}``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .harness import ControllerSpec
from .model import PRESETS, ContinuousInterval, FiniteList, SystemModel

MODES = ("supervised", "unverified_only", "advisor_only")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    model: SystemModel
    delta_x: float
    delta_u: float = 0.0
    truncation_sigmas: float = 6.0
    rho: float = 0.01
    max_horizon: int = 100_000
    controller: ControllerSpec = field(default_factory=ControllerSpec)
    x0: float | None = None
    n_trials: int = 100_000
    seed: int = 0
    workers: int = 1
    mode: str = "supervised"
    record_trials: int = 1000
    output: dict = field(default_factory=dict)


def _num(block, key, default=None, kind=float):
    if key not in block:
        if default is None:
            raise ConfigError(f"missing required field {key!r}")
        return default
    value = block[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"field {key!r} must be a number, got {value!r}")
    if kind is int and int(value) != value:
        raise ConfigError(f"field {key!r} must be an integer, got {value!r}")
    return kind(value)


def parse_model(block: dict) -> SystemModel:
    block = dict(block)
    try:
        if "preset" in block:
            name = block.pop("preset")
            if name not in PRESETS:
                raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
            return PRESETS[name](**block)
        inputs = block.get("inputs")
        if not isinstance(inputs, dict) or len(inputs) != 1:
            raise ConfigError("model.inputs must be {'interval': [lo, hi]} or {'values': [...]}")
        if "interval" in inputs:
            spec = ContinuousInterval(*map(float, inputs["interval"]))
        elif "values" in inputs:
            spec = FiniteList(tuple(inputs["values"]))
        else:
            raise ConfigError(f"unknown input spec {sorted(inputs)}")
        safe = block.get("safe_set")
        if not isinstance(safe, (list, tuple)) or len(safe) != 2:
            raise ConfigError("model.safe_set must be [lo, hi]")
        common = dict(p0=_num(block, "p0"), p1=_num(block, "p1", 0.0), q0=_num(block, "q0"),
                      q1=_num(block, "q1", 0.0), safe_lo=float(safe[0]), safe_hi=float(safe[1]),
                      input_spec=spec)
        if "noise_variance" in block:
            return SystemModel.from_variance(noise_variance=_num(block, "noise_variance"), **common)
        return SystemModel(noise_std=_num(block, "noise_std"), **common)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model block: {exc}") from exc


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(raw) - {"model", "abstraction", "synthesis", "simulation", "output"}
    if unknown:
        raise ConfigError(f"unknown configuration blocks {sorted(unknown)}")
    if "model" not in raw:
        raise ConfigError("missing 'model' block")
    model = parse_model(raw["model"])
    ab = raw.get("abstraction", {})
    syn = raw.get("synthesis", {})
    sim = raw.get("simulation", {})
    ctrl = sim.get("controller", {"kind": "constant_zero"})
    try:
        controller = ControllerSpec(kind=ctrl.get("kind", "constant_zero"),
                                    params={k: v for k, v in ctrl.items() if k not in ("kind", "seed")},
                                    seed=int(ctrl.get("seed", sim.get("seed", 0))))
    except (TypeError, ValueError, AttributeError) as exc:
        raise ConfigError(f"invalid controller: {exc}") from exc
    cfg = ExperimentConfig(
        model=model,
        delta_x=_num(ab, "delta_x"),
        delta_u=_num(ab, "delta_u", 0.0),
        truncation_sigmas=_num(ab, "truncation_sigmas", 6.0),
        rho=_num(syn, "rho", 0.01),
        max_horizon=_num(syn, "max_horizon", 100_000, int),
        controller=controller,
        x0=_num(sim, "x0") if "x0" in sim else None,
        n_trials=_num(sim, "n_trials", 100_000, int),
        seed=_num(sim, "seed", 0, int),
        workers=_num(sim, "workers", 1, int),
        mode=sim.get("mode", "supervised"),
        record_trials=_num(sim, "record_trials", 1000, int),
        output=dict(raw.get("output", {})),
    )
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    if not cfg.delta_x > 0:
        raise ConfigError("abstraction.delta_x must be positive")
    if isinstance(cfg.model.input_spec, ContinuousInterval) and not cfg.delta_u > 0:
        raise ConfigError("abstraction.delta_u must be positive for an input interval")
    if not cfg.truncation_sigmas >= 4:
        raise ConfigError("abstraction.truncation_sigmas must be >= 4")
    if not 0 < cfg.rho < 1:
        raise ConfigError("synthesis.rho must lie in (0, 1)")
    if cfg.max_horizon < 1:
        raise ConfigError("synthesis.max_horizon must be >= 1")
    if cfg.n_trials < 1:
        raise ConfigError("simulation.n_trials must be >= 1")
    if cfg.workers < 1:
        raise ConfigError("simulation.workers must be >= 1")
    if cfg.record_trials < 0:
        raise ConfigError("simulation.record_trials must be >= 0")
    if cfg.mode not in MODES:
        raise ConfigError(f"simulation.mode must be one of {MODES}")
    if cfg.x0 is not None and not cfg.model.safe_lo <= cfg.x0 < cfg.model.safe_hi:
        raise ConfigError(f"simulation.x0={cfg.x0} outside the safe set")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON: {exc}") from exc
    return parse_config(raw)
