"""Compiled row-expectation kernels shared by synthesis, supervisor and harness.

Every caller computes ``sum_m V[m] * T[row, m] + sink[row]`` through the same
sequential loop, so synthesis, the scalar supervisor and the batched harness
agree bit-for-bit and accept/reject decisions never depend on the code path.
"""
import numba
import numpy as np


@numba.njit(cache=True)
def row_expectation(indptr, indices, data, sink, values, row):
    acc = 0.0
    for jj in range(indptr[row], indptr[row + 1]):
        acc += data[jj] * values[indices[jj]]
    return acc + sink[row]


@numba.njit(cache=True)
def all_row_expectations(indptr, indices, data, sink, values, out):
    for row in range(out.shape[0]):
        acc = 0.0
        for jj in range(indptr[row], indptr[row + 1]):
            acc += data[jj] * values[indices[jj]]
        out[row] = acc + sink[row]
    return out


@numba.njit(cache=True)
def selected_row_expectations(indptr, indices, data, sink, values, rows, out):
    for t in range(rows.shape[0]):
        row = rows[t]
        acc = 0.0
        for jj in range(indptr[row], indptr[row + 1]):
            acc += data[jj] * values[indices[jj]]
        out[t] = acc + sink[row]
    return out


def expectations(mdp, values):
    out = np.empty(mdp.n_rows, dtype=np.float64)
    return all_row_expectations(mdp.indptr, mdp.indices, mdp.data, mdp.sink,
                                np.ascontiguousarray(values, dtype=np.float64), out)
