"""History-based run-time supervisor.

At time ``k`` a proposed input ``u`` in abstract state ``s`` is accepted iff

    product_k * (1 - E[V*_{H-k-1}(next) | s, u])  >=  1 - rho

where ``product_k`` multiplies the one-step safe mass of every input that
was actually applied so far, and the expectation counts the sink with
value 1. Rejected inputs are replaced by the safety advisor's input.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, TextIO

import numpy as np

from . import _kernels
from .abstraction import FiniteMdp, Grid
from .synthesis import ValuePolicyTable, advisor_input

SINK = -1


class SupervisorError(RuntimeError):
    pass


class Verdict(str, enum.Enum):
    ACCEPTED = "accepted"
    OVERRIDDEN = "overridden"
    TERMINATED = "terminated"


@dataclass(frozen=True)
class Decision:
    verdict: Verdict
    applied_input: Optional[int]
    certified_quantity: float


@dataclass
class SupervisorState:
    rho: float
    horizon: int
    k: int = 0
    product: float = 1.0
    terminated: bool = False

    def reset(self):
        self.k = 0
        self.product = 1.0
        self.terminated = False


def quantize(grid: Grid, x: float) -> int:
    """Cell index of ``x``, or :data:`SINK` outside ``[safe_lo, safe_hi)``."""
    if not grid.safe_lo <= x < grid.safe_hi:
        return SINK
    return min(int(math.floor((x - grid.safe_lo) / grid.delta_x)), grid.n_cells - 1)


def quantize_many(grid: Grid, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    idx = np.floor((x - grid.safe_lo) / grid.delta_x)
    idx = np.minimum(idx, grid.n_cells - 1)
    inside = (x >= grid.safe_lo) & (x < grid.safe_hi)
    return np.where(inside, idx, SINK).astype(np.int64)


def check_input(sup: SupervisorState, mdp: FiniteMdp, table: ValuePolicyTable,
                state: int, u_prop: int) -> float:
    """Certified safety quantity of proposing ``u_prop`` in ``state`` at time ``sup.k``."""
    if sup.terminated:
        raise SupervisorError("supervisor already terminated")
    if not 0 <= sup.k < sup.horizon:
        raise SupervisorError(f"time index {sup.k} outside 0..{sup.horizon - 1}")
    if not 0 <= state < mdp.n_states:
        raise SupervisorError(f"state {state} is not a safe cell index")
    if not 0 <= u_prop < mdp.n_inputs:
        raise SupervisorError(f"input index {u_prop} out of range")
    future = table.values[sup.horizon - sup.k - 1]
    reach = _kernels.row_expectation(mdp.indptr, mdp.indices, mdp.data, mdp.sink,
                                     future, mdp.row_index(state, u_prop))
    return sup.product * (1.0 - reach)


def step(sup: SupervisorState, mdp: FiniteMdp, table: ValuePolicyTable,
         x_observed: float, u_unverified: float) -> Decision:
    """Gate one proposed input and advance the supervisor by one tick."""
    if sup.terminated:
        raise SupervisorError("step called after termination")
    state = quantize(mdp.grid, x_observed)
    if state == SINK:
        sup.terminated = True
        return Decision(Verdict.TERMINATED, None, math.nan)
    u_idx = mdp.inputs.nearest(u_unverified)
    q = check_input(sup, mdp, table, state, u_idx)
    if q >= 1.0 - sup.rho:
        verdict, applied = Verdict.ACCEPTED, u_idx
    else:
        verdict, applied = Verdict.OVERRIDDEN, advisor_input(table, sup.k, state)
    sup.product *= 1.0 - float(mdp.sink[mdp.row_index(state, applied)])
    sup.k += 1
    if sup.k == sup.horizon:
        sup.terminated = True
    return Decision(verdict, applied, q)


class HistorySupervisor:
    """Stateful supervisor bound to one synthesized MDP and value table.

    >>> sup = HistorySupervisor(mdp, table)            # doctest: +SKIP
    >>> decision = sup.step(x_observed, u_proposed)    # doctest: +SKIP
    """

    def __init__(self, mdp: FiniteMdp, table: ValuePolicyTable):
        self.mdp = mdp
        self.table = table
        self.state = SupervisorState(table.rho, table.horizon)

    def reset(self):
        self.state.reset()
        return self

    def check(self, state: int, u_prop: int) -> float:
        return check_input(self.state, self.mdp, self.table, state, u_prop)

    def step(self, x_observed: float, u_unverified: float) -> Decision:
        return step(self.state, self.mdp, self.table, x_observed, u_unverified)

    def applied_value(self, decision: Decision) -> float:
        if decision.applied_input is None:
            return math.nan
        return float(self.mdp.inputs.representatives[decision.applied_input])


def serve(supervisor: HistorySupervisor, instream: TextIO, outstream: TextIO) -> int:
    """Line protocol for external controllers.

    Each request line is ``<x_observed> <u_proposed>`` in decimal; the reply
    is ``<verdict> <applied_input_value> <certified_quantity>``. A ``reset``
    line re-arms the supervisor for a fresh window. Malformed requests get
    ``error <message>``. Returns the number of decisions served.
    """
    served = 0
    for line in instream:
        line = line.strip()
        if not line:
            continue
        if line == "reset":
            supervisor.reset()
            outstream.write("ok\n")
        else:
            try:
                x_text, u_text = line.split()
                d = supervisor.step(float(x_text), float(u_text))
            except (ValueError, SupervisorError) as exc:
                outstream.write(f"error {exc}\n")
            else:
                served += 1
                outstream.write(f"{d.verdict.value} {supervisor.applied_value(d)!r} "
                                f"{d.certified_quantity!r}\n")
        outstream.flush()
    return served
