"""One-dimensional stochastic control systems with additive Gaussian noise.

The successor of a state ``x`` under input ``u`` is

    x' = (p0 + p1*u) * x + q0 + q1*u + w,    w ~ N(0, noise_std**2)

which covers both bundled case studies (room temperature, traffic density).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import ndtr


@dataclass(frozen=True)
class ContinuousInterval:
    """Closed input interval ``[u_lo, u_hi]``."""

    u_lo: float
    u_hi: float

    def __post_init__(self):
        if not self.u_lo < self.u_hi:
            raise ValueError(f"empty input interval [{self.u_lo}, {self.u_hi}]")


@dataclass(frozen=True)
class FiniteList:
    """Finite set of admissible inputs, stored sorted."""

    values: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("FiniteList needs at least one input value")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("FiniteList values must be sorted and duplicate-free")
        object.__setattr__(self, "values", vals)


InputSpec = Union[ContinuousInterval, FiniteList]
MeanFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SystemModel:
    """Bilinear 1-D dynamics with Gaussian noise and a half-open safe set.

    ``mean_fn`` optionally replaces the bilinear successor mean; it must
    accept broadcastable arrays ``(x, u)``.
    """

    p0: float
    p1: float
    q0: float
    q1: float
    noise_std: float
    safe_lo: float
    safe_hi: float
    input_spec: InputSpec
    mean_fn: Optional[MeanFn] = field(default=None, compare=False)

    def __post_init__(self):
        if not self.noise_std > 0:
            raise ValueError(f"noise_std must be positive, got {self.noise_std}")
        if not self.safe_lo < self.safe_hi:
            raise ValueError(f"empty safe set [{self.safe_lo}, {self.safe_hi})")
        if not isinstance(self.input_spec, (ContinuousInterval, FiniteList)):
            raise TypeError("input_spec must be ContinuousInterval or FiniteList")

    @classmethod
    def from_variance(cls, *, noise_variance: float, **kwargs) -> "SystemModel":
        if not noise_variance > 0:
            raise ValueError(f"noise_variance must be positive, got {noise_variance}")
        return cls(noise_std=math.sqrt(noise_variance), **kwargs)

    def contains(self, x):
        """Membership in the safe set ``[safe_lo, safe_hi)``."""
        return (x >= self.safe_lo) & (x < self.safe_hi)

    def to_dict(self) -> dict:
        if isinstance(self.input_spec, ContinuousInterval):
            inputs = {"interval": [self.input_spec.u_lo, self.input_spec.u_hi]}
        else:
            inputs = {"values": list(self.input_spec.values)}
        return {
            "p0": self.p0, "p1": self.p1, "q0": self.q0, "q1": self.q1,
            "noise_std": self.noise_std,
            "safe_set": [self.safe_lo, self.safe_hi],
            "inputs": inputs,
        }


def temperature_model(beta=0.022, gamma=0.05, t_ext=-1.0, t_heater=50.0,
                      noise_variance=0.04, safe_set=(19.0, 21.0),
                      u_range=(0.0, 0.6)) -> SystemModel:
    """Room heated by a heater with conduction to the outside.

    x' = (1 - beta - gamma*u) x + gamma*t_heater*u + beta*t_ext + w
    """
    return SystemModel.from_variance(
        p0=1.0 - beta, p1=-gamma, q0=beta * t_ext, q1=gamma * t_heater,
        noise_variance=noise_variance,
        safe_lo=safe_set[0], safe_hi=safe_set[1],
        input_spec=ContinuousInterval(*u_range),
    )


def traffic_model(length=500.0, speed=25.0, tau=6.0, e1=3.0, e2=6.0, q=0.1,
                  noise_variance=2.0, safe_set=(0.0, 20.0),
                  inputs=(0.0, 1.0)) -> SystemModel:
    """Road cell with a light-controlled entry, a free entry and one exit.

    x' = (1 - tau*speed/length - q) x + e1*u + e2 + w
    """
    return SystemModel.from_variance(
        p0=1.0 - tau * speed / length - q, p1=0.0, q0=e2, q1=e1,
        noise_variance=noise_variance,
        safe_lo=safe_set[0], safe_hi=safe_set[1],
        input_spec=FiniteList(tuple(inputs)),
    )


PRESETS = {"temperature": temperature_model, "traffic": traffic_model}


def successor_mean(model: SystemModel, x, u):
    """Deterministic part of the dynamics; broadcasts over arrays."""
    if model.mean_fn is not None:
        return model.mean_fn(x, u)
    return (model.p0 + model.p1 * u) * x + model.q0 + model.q1 * u


def gaussian_interval_prob(lo, hi, mean, std):
    """Mass of ``N(mean, std**2)`` on ``[lo, hi]``, vectorised.

    Upper-tail intervals are evaluated through the survival function so
    that far-tail cells keep their relative precision.
    """
    a = (np.asarray(lo, dtype=float) - mean) / std
    b = (np.asarray(hi, dtype=float) - mean) / std
    upper = a > 0
    p = np.where(upper, ndtr(-a) - ndtr(-b), ndtr(b) - ndtr(a))
    return np.clip(p, 0.0, 1.0)


def transition_prob_to_interval(model: SystemModel, x: float, u: float,
                                lo: float, hi: float) -> float:
    """Probability that the successor of ``(x, u)`` lands in ``[lo, hi]``."""
    if lo > hi:
        raise ValueError(f"interval bounds reversed: lo={lo} > hi={hi}")
    m = successor_mean(model, x, u)
    return float(gaussian_interval_prob(lo, hi, m, model.noise_std))


def sample_next(model: SystemModel, x: float, u: float, rng: np.random.Generator) -> float:
    return float(successor_mean(model, x, u) + model.noise_std * rng.standard_normal())

