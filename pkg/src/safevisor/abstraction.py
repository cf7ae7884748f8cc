"""Finite-MDP abstraction of a :class:`~safevisor.model.SystemModel`.

The safe set is cut into equal half-open cells, the input set into equal
cells (or taken verbatim when finite), and every (cell, input) pair gets a
sparse row of Gaussian cell probabilities. Whatever mass falls outside the
safe set, or outside the truncation band around the successor mean, goes to
a single absorbing sink state.

Rows are flattened as ``row = state * n_inputs + input`` into one CSR
layout (``indptr``/``indices``/``data``) plus a dense ``sink`` column.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ContinuousInterval, FiniteList, SystemModel, gaussian_interval_prob, successor_mean

GRID_TOLERANCE = 0.005


def _cell_count(span: float, delta: float, what: str) -> int:
    if not delta > 0:
        raise ValueError(f"{what} must be positive, got {delta}")
    ratio = span / delta
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > GRID_TOLERANCE:
        raise ValueError(f"{what}={delta} does not divide the range {span} "
                         f"into a whole number of cells (ratio {ratio:.6g})")
    return n


@dataclass(frozen=True)
class Grid:
    """Uniform partition of ``[safe_lo, safe_hi)`` into ``n_cells`` cells."""

    safe_lo: float
    safe_hi: float
    delta_x: float
    n_cells: int

    @property
    def edges(self) -> np.ndarray:
        e = self.safe_lo + self.delta_x * np.arange(self.n_cells + 1)
        e[-1] = self.safe_hi
        return e

    @property
    def representatives(self) -> np.ndarray:
        return self.safe_lo + self.delta_x * (np.arange(self.n_cells) + 0.5)


@dataclass(frozen=True)
class InputGrid:
    """Input representatives; ``delta_u`` is 0 for a finite input list."""

    delta_u: float
    representatives: tuple

    @property
    def n_inputs(self) -> int:
        return len(self.representatives)

    def nearest(self, u):
        """Index of the representative nearest to ``u``; ties go to the lower index."""
        reps = np.asarray(self.representatives)
        u = np.asarray(u, dtype=float)
        hi = np.clip(np.searchsorted(reps, u), 0, len(reps) - 1)
        lo = np.maximum(hi - 1, 0)
        idx = np.where(np.abs(u - reps[lo]) <= np.abs(reps[hi] - u), lo, hi)
        return idx if idx.ndim else int(idx)


def build_grid(model: SystemModel, delta_x: float) -> Grid:
    span = model.safe_hi - model.safe_lo
    n = _cell_count(span, delta_x, "delta_x")
    return Grid(model.safe_lo, model.safe_hi, span / n, n)


def discretize_inputs(model: SystemModel, delta_u: float = 0.0) -> InputGrid:
    spec = model.input_spec
    if isinstance(spec, FiniteList):
        return InputGrid(0.0, spec.values)
    assert isinstance(spec, ContinuousInterval)
    span = spec.u_hi - spec.u_lo
    m = _cell_count(span, delta_u, "delta_u")
    width = span / m
    reps = spec.u_lo + width * (np.arange(m) + 0.5)
    return InputGrid(width, tuple(float(r) for r in reps))


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """Sparse finite MDP over ``n_cells`` safe states plus an implicit sink.

    The sink is absorbing for every input and has no stored row.
    """

    grid: Grid
    inputs: InputGrid
    indptr: np.ndarray    # int64, n_rows + 1
    indices: np.ndarray   # int32, nnz
    data: np.ndarray      # float64, nnz
    sink: np.ndarray      # float64, n_rows
    truncation_sigmas: float = math.inf

    @property
    def n_states(self) -> int:
        return self.grid.n_cells

    @property
    def n_inputs(self) -> int:
        return self.inputs.n_inputs

    @property
    def n_rows(self) -> int:
        return self.n_states * self.n_inputs

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    def row_index(self, state: int, u: int) -> int:
        return state * self.n_inputs + u

    def row(self, state: int, u: int):
        """``(destinations, probabilities, sink_prob)`` of one row."""
        r = self.row_index(state, u)
        a, b = self.indptr[r], self.indptr[r + 1]
        return self.indices[a:b], self.data[a:b], float(self.sink[r])

    def sink_prob(self, state, u):
        return self.sink[np.asarray(state) * self.n_inputs + np.asarray(u)]

    def to_dense(self) -> np.ndarray:
        """Array ``P[state, input, dest]`` with the sink as the last destination."""
        n, m = self.n_states, self.n_inputs
        P = np.zeros((self.n_rows, n + 1))
        rows = np.repeat(np.arange(self.n_rows), np.diff(self.indptr))
        P[rows, self.indices] = self.data
        P[:, n] = self.sink
        return P.reshape(n, m, n + 1)

    @classmethod
    def from_dense(cls, P, grid: Grid | None = None, inputs: InputGrid | None = None) -> "FiniteMdp":
        """Build from ``P[state, input, dest]`` whose last destination is the sink.

        Without explicit grids, states sit on the unit grid ``[0, n)`` and the
        inputs are labelled ``0..m-1``.
        """
        P = np.asarray(P, dtype=np.float64)
        if P.ndim != 3 or P.shape[2] != P.shape[0] + 1:
            raise ValueError("P must have shape (n_states, n_inputs, n_states + 1)")
        if (P < 0).any() or not np.allclose(P.sum(axis=2), 1.0, atol=1e-9, rtol=0):
            raise ValueError("every row of P must be a probability vector")
        n, m, _ = P.shape
        grid = grid or Grid(0.0, float(n), 1.0, n)
        inputs = inputs or InputGrid(0.0, tuple(float(j) for j in range(m)))
        flat = P.reshape(n * m, n + 1)
        safe = flat[:, :n]
        mask = safe > 0
        indptr = np.concatenate([[0], np.cumsum(mask.sum(axis=1))]).astype(np.int64)
        rows, cols = np.nonzero(mask)
        return cls(grid, inputs, indptr, cols.astype(np.int32), safe[rows, cols].copy(),
                   flat[:, n].copy())

    def row_sums(self) -> np.ndarray:
        rows = np.repeat(np.arange(self.n_rows), np.diff(self.indptr))
        return np.bincount(rows, weights=self.data, minlength=self.n_rows) + self.sink


def _band(model, grid, mean, k):
    """First and one-past-last cell index touched by ``[mean - k sd, mean + k sd]``."""
    w = grid.delta_x
    half = k * model.noise_std
    lo = np.floor((mean - half - grid.safe_lo) / w)
    hi = np.floor((mean + half - grid.safe_lo) / w) + 1
    lo = np.clip(lo, 0, grid.n_cells).astype(np.int64)
    hi = np.clip(hi, 0, grid.n_cells).astype(np.int64)
    return lo, np.maximum(hi, lo)


def build_abstraction(model: SystemModel, grid: Grid, inputs: InputGrid,
                      truncation_sigmas: float = 6.0, chunk_entries: int = 4_000_000) -> FiniteMdp:
    """Assemble the sparse transition kernel of the finite MDP.

    Each stored entry is the exact Gaussian mass of a destination cell, for
    every cell that intersects ``mean +- truncation_sigmas * noise_std``;
    the sink takes ``1 - sum(entries)``. Dropping tails into the sink can
    only raise reach probabilities, never lower them.
    """
    if not truncation_sigmas >= 4:
        raise ValueError(f"truncation_sigmas must be >= 4, got {truncation_sigmas}")
    n, m = grid.n_cells, inputs.n_inputs
    xs = grid.representatives
    us = np.asarray(inputs.representatives, dtype=float)
    means = np.asarray(successor_mean(model, xs[:, None], us[None, :]), dtype=float).reshape(n * m)
    lo, hi = _band(model, grid, means, truncation_sigmas)
    counts = hi - lo
    indptr = np.zeros(n * m + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    nnz = int(indptr[-1])
    indices = np.empty(nnz, dtype=np.int32)
    data = np.empty(nnz, dtype=np.float64)
    sink = np.empty(n * m, dtype=np.float64)
    edges = grid.edges

    start = 0
    while start < n * m:
        # grow the row block until it holds about chunk_entries entries
        stop = int(np.searchsorted(indptr, indptr[start] + chunk_entries, side="right"))
        stop = min(max(stop - 1, start + 1), n * m)
        c = counts[start:stop]
        a, b = indptr[start], indptr[stop]
        row_of = np.repeat(np.arange(start, stop), c)
        cells = (np.arange(b - a) - np.repeat(indptr[start:stop] - a, c)) + np.repeat(lo[start:stop], c)
        mu = means[row_of]
        p = gaussian_interval_prob(edges[cells], edges[cells + 1], mu, model.noise_std)
        indices[a:b] = cells
        data[a:b] = p
        stored = np.bincount(row_of - start, weights=p, minlength=stop - start)
        sink[start:stop] = np.clip(1.0 - stored, 0.0, 1.0)
        start = stop
    return FiniteMdp(grid, inputs, indptr, indices, data, sink, float(truncation_sigmas))
