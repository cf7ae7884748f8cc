"""scikit-learn style front end for safety-advisor synthesis."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .abstraction import FiniteMdp, build_abstraction, build_grid, discretize_inputs
from .model import SystemModel
from .supervisor import SINK, HistorySupervisor, quantize_many
from .synthesis import value_iteration


class SafetyAdvisor(BaseEstimator):
    """Synthesize the optimal safety advisor of a system for tolerance ``rho``.

    ``fit`` takes a :class:`SystemModel` (abstracted on the fly) or an
    already-built :class:`FiniteMdp`. After fitting, ``predict`` maps
    observed states to the advisor's input values.

    Parameters
    ----------
    delta_x, delta_u : float
        State and input cell widths; ``delta_u`` is ignored for finite inputs.
    rho : float
        Maximal tolerable probability of reaching the unsafe set.
    truncation_sigmas : float
        Kernel band half-width in noise standard deviations.
    max_horizon : int
        Upper bound on the certified horizon.

    Attributes
    ----------
    mdp_ : FiniteMdp
    table_ : ValuePolicyTable
    horizon_ : int
    """

    def __init__(self, delta_x=1e-3, delta_u=0.0, rho=0.01, truncation_sigmas=6.0,
                 max_horizon=100_000):
        self.delta_x = delta_x
        self.delta_u = delta_u
        self.rho = rho
        self.truncation_sigmas = truncation_sigmas
        self.max_horizon = max_horizon

    def fit(self, model, y=None):
        if isinstance(model, FiniteMdp):
            mdp = model
        elif isinstance(model, SystemModel):
            grid = build_grid(model, self.delta_x)
            inputs = discretize_inputs(model, self.delta_u)
            mdp = build_abstraction(model, grid, inputs, self.truncation_sigmas)
        else:
            raise TypeError(f"fit expects a SystemModel or FiniteMdp, got {type(model).__name__}")
        self.mdp_ = mdp
        self.table_ = value_iteration(mdp, self.rho, self.max_horizon)
        self.horizon_ = self.table_.horizon
        return self

    def _states(self, X):
        X = check_array(X, ensure_2d=False, dtype=np.float64)
        if X.ndim == 2:
            if X.shape[1] != 1:
                raise ValueError(f"expected one state feature, got {X.shape[1]}")
            X = X[:, 0]
        states = quantize_many(self.mdp_.grid, X)
        if (states == SINK).any():
            raise ValueError("some states lie outside the safe set")
        return states

    def predict(self, X, k=0):
        """Advisor input values at time ``k`` for the observed states ``X``."""
        check_is_fitted(self, "table_")
        if not 0 <= k < self.horizon_:
            raise IndexError(f"time index {k} outside 0..{self.horizon_ - 1}")
        idx = self.table_.policy[k, self._states(X)]
        return np.asarray(self.mdp_.inputs.representatives)[idx]

    def reach_probability(self, X, n=None):
        """Minimal probability of reaching the unsafe set within ``n`` steps (default: the horizon)."""
        check_is_fitted(self, "table_")
        n = self.horizon_ if n is None else n
        return self.table_.values[n, self._states(X)]

    def supervisor(self) -> HistorySupervisor:
        check_is_fitted(self, "table_")
        return HistorySupervisor(self.mdp_, self.table_)
