"""Finite-horizon reach-avoid dynamic programming on a :class:`FiniteMdp`.

``values[n][s]`` is the least probability of hitting the sink within ``n``
steps from safe state ``s``; ``policy[k][s]`` is the minimising input at
time ``k`` of a run certified for ``horizon`` steps. The sink itself has
value 1 at every horizon and is never stored.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .abstraction import FiniteMdp

log = logging.getLogger(__name__)


class InfeasibleToleranceError(ValueError):
    """No horizon >= 1 keeps every safe state's reach probability within rho."""


@dataclass(frozen=True, eq=False)
class ValuePolicyTable:
    horizon: int
    rho: float
    values: np.ndarray   # (horizon + 1, n_states) float64
    policy: np.ndarray   # (horizon, n_states) int32
    capped: bool = False

    @property
    def n_states(self) -> int:
        return self.values.shape[1]

    def value(self, n: int) -> np.ndarray:
        return self.values[n]


def _check_policy(mdp: FiniteMdp, policy) -> np.ndarray:
    policy = np.asarray(policy)
    if policy.ndim != 2 or policy.shape[1] != mdp.n_states:
        raise ValueError(f"policy must have shape (horizon, {mdp.n_states}), got {policy.shape}")
    if policy.size and (policy.min() < 0 or policy.max() >= mdp.n_inputs):
        raise ValueError(f"policy entries must lie in 0..{mdp.n_inputs - 1}")
    return policy.astype(np.int64)


def value_iteration(mdp: FiniteMdp, rho: float, max_horizon: int = 100_000) -> ValuePolicyTable:
    """Backward induction up to the longest horizon that keeps every safe state within ``rho``.

    Stops at the first ``n`` where ``max_s values[n + 1][s] > rho``; the
    comparison is exact, with no slack. Ties in the minimum over inputs go
    to the lowest input index.

    Raises
    ------
    InfeasibleToleranceError
        If a single step already exceeds ``rho`` from some safe state.
    """
    if not 0 < rho < 1:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    if max_horizon < 1:
        raise ValueError(f"max_horizon must be >= 1, got {max_horizon}")
    n, m = mdp.n_states, mdp.n_inputs
    states = np.arange(n)
    V = np.zeros(n)
    values = [V]
    argmins = []
    while len(argmins) < max_horizon:
        Q = _kernels.expectations(mdp, V).reshape(n, m)
        best = Q.argmin(axis=1)
        V_next = Q[states, best]
        worst = V_next.max()
        if worst > rho:
            if not argmins:
                raise InfeasibleToleranceError(
                    f"one-step reach probability {worst:.6g} already exceeds rho={rho}")
            break
        values.append(V_next)
        argmins.append(best.astype(np.int32))
        V = V_next
    horizon = len(argmins)
    capped = horizon == max_horizon
    if capped:
        log.info("horizon capped at max_horizon=%d without exceeding rho", max_horizon)
    policy = np.stack(argmins[::-1])
    return ValuePolicyTable(horizon, float(rho), np.stack(values), policy, capped)


def evaluate_policy(mdp: FiniteMdp, policy) -> np.ndarray:
    """Reach probabilities ``V[n][s]`` of a fixed Markov policy, ``n = 0..horizon``.

    Step ``n -> n+1`` applies ``policy[horizon - n - 1]``, so ``V[horizon]``
    is the probability of reaching the sink when the run starts at time 0.
    """
    policy = _check_policy(mdp, policy)
    horizon, n = policy.shape
    states = np.arange(n)
    out = np.zeros((horizon + 1, n))
    for step in range(horizon):
        rows = states * mdp.n_inputs + policy[horizon - step - 1]
        _kernels.selected_row_expectations(mdp.indptr, mdp.indices, mdp.data, mdp.sink,
                                           out[step], rows, out[step + 1])
    return out


def advisor_input(table: ValuePolicyTable, k: int, state: int) -> int:
    """Optimal input index at time ``k`` in safe state ``state``."""
    if not 0 <= k < table.horizon:
        raise IndexError(f"time index {k} outside 0..{table.horizon - 1}")
    if not 0 <= state < table.n_states:
        raise IndexError(f"state {state} is not a safe cell index")
    return int(table.policy[k, state])
