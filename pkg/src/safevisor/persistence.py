"""Binary persistence of finite MDPs and value/policy tables.

Layout (little-endian)::

    b"SVMDP1"  u16 version
    grid       f64 safe_lo, f64 safe_hi, f64 delta_x, i64 n_cells
    inputs     f64 delta_u, i64 n_inputs, f64[n_inputs] representatives
               f64 truncation_sigmas
    kernel     i64 n_rows, i64 nnz,
               i64[n_rows + 1] row offsets, i32[nnz] columns (+ pad to 8 bytes),
               f64[nnz] probabilities, f64[n_rows] sink probabilities
    sections   4-byte tag, u64 payload length, payload; repeated

Sections written by synthesis:

    b"VALS"    i64 horizon, i64 n_states, f64 rho, i64 capped, f64[(horizon+1)*n_states]
    b"PLCY"    i64 horizon, i64 n_states, i32[horizon*n_states] (+ pad to 8 bytes)
"""
from __future__ import annotations

import struct

import numpy as np

from .abstraction import FiniteMdp, Grid, InputGrid
from .synthesis import ValuePolicyTable

MAGIC = b"SVMDP1"
VERSION = 1


class FormatError(ValueError):
    """File is not a readable SVMDP1 artifact."""


def _pad(n: int) -> int:
    return (-n) % 8


def _write_array(fh, arr, dtype):
    a = np.ascontiguousarray(arr, dtype=dtype)
    a.tofile(fh)
    pad = _pad(a.nbytes)
    if pad:
        fh.write(b"\0" * pad)


def save(path, mdp: FiniteMdp, table: ValuePolicyTable | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<H", VERSION))
        g = mdp.grid
        fh.write(struct.pack("<dddq", g.safe_lo, g.safe_hi, g.delta_x, g.n_cells))
        fh.write(struct.pack("<dq", mdp.inputs.delta_u, mdp.n_inputs))
        _write_array(fh, mdp.inputs.representatives, "<f8")
        fh.write(struct.pack("<d", mdp.truncation_sigmas))
        fh.write(struct.pack("<qq", mdp.n_rows, mdp.nnz))
        _write_array(fh, mdp.indptr, "<i8")
        _write_array(fh, mdp.indices, "<i4")
        _write_array(fh, mdp.data, "<f8")
        _write_array(fh, mdp.sink, "<f8")
        if table is not None:
            _write_table(fh, table)


def append_table(path, table: ValuePolicyTable) -> None:
    with open(path, "ab") as fh:
        _write_table(fh, table)


def _write_table(fh, table: ValuePolicyTable):
    H, n = table.horizon, table.n_states
    vals = np.ascontiguousarray(table.values, dtype="<f8")
    fh.write(b"VALS" + struct.pack("<Q", 32 + vals.nbytes))
    fh.write(struct.pack("<qqdq", H, n, table.rho, int(table.capped)))
    _write_array(fh, vals, "<f8")
    pol = np.ascontiguousarray(table.policy, dtype="<i4")
    fh.write(b"PLCY" + struct.pack("<Q", 16 + pol.nbytes + _pad(pol.nbytes)))
    fh.write(struct.pack("<qq", H, n))
    _write_array(fh, pol, "<i4")


class _Reader:
    def __init__(self, path, mmap):
        self.path = path
        self.mmap = mmap
        self.fh = open(path, "rb")
        self.fh.seek(0, 2)
        self.size = self.fh.tell()
        self.fh.seek(0)

    def unpack(self, fmt):
        n = struct.calcsize(fmt)
        buf = self.fh.read(n)
        if len(buf) != n:
            raise FormatError(f"{self.path}: truncated file")
        return struct.unpack(fmt, buf)

    def array(self, dtype, count, shape=None):
        dtype = np.dtype(dtype)
        nbytes = dtype.itemsize * count
        offset = self.fh.tell()
        if offset + nbytes > self.size:
            raise FormatError(f"{self.path}: truncated file")
        if self.mmap and count:
            a = np.asarray(np.memmap(self.path, dtype=dtype, mode="r", offset=offset, shape=(count,)))
        else:
            a = np.fromfile(self.fh, dtype=dtype, count=count, offset=0)
        self.fh.seek(offset + nbytes + _pad(nbytes))
        return a.reshape(shape) if shape is not None else a

    def close(self):
        self.fh.close()


def load(path, mmap: bool = False):
    """Return ``(mdp, table)``; ``table`` is ``None`` for an abstraction-only file.

    With ``mmap=True`` the large arrays are memory-mapped read-only, so a
    value table bigger than memory is paged in per step on demand.
    """
    r = _Reader(path, mmap)
    try:
        magic = r.fh.read(len(MAGIC))
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, not an SVMDP1 file")
        (version,) = r.unpack("<H")
        if version != VERSION:
            raise FormatError(f"{path}: unsupported format version {version}")
        lo, hi, dx, n = r.unpack("<dddq")
        du, m = r.unpack("<dq")
        reps = r.array("<f8", m)
        (trunc,) = r.unpack("<d")
        n_rows, nnz = r.unpack("<qq")
        if n_rows != n * m:
            raise FormatError(f"{path}: row count {n_rows} != {n} states x {m} inputs")
        indptr = r.array("<i8", n_rows + 1)
        indices = r.array("<i4", nnz)
        data = r.array("<f8", nnz)
        sink = r.array("<f8", n_rows)
        mdp = FiniteMdp(Grid(lo, hi, dx, n), InputGrid(du, tuple(float(v) for v in reps)),
                        indptr, indices, data, sink, trunc)
        sections = {}
        while r.fh.tell() < r.size:
            tag = r.fh.read(4)
            (length,) = r.unpack("<Q")
            start = r.fh.tell()
            if tag == b"VALS":
                H, ns, rho, capped = r.unpack("<qqdq")
                sections["values"] = (r.array("<f8", (H + 1) * ns, (H + 1, ns)), H, rho, bool(capped))
            elif tag == b"PLCY":
                H, ns = r.unpack("<qq")
                sections["policy"] = r.array("<i4", H * ns, (H, ns))
            r.fh.seek(start + length)
        table = None
        if "values" in sections:
            if "policy" not in sections:
                raise FormatError(f"{path}: value section without policy section")
            values, H, rho, capped = sections["values"]
            table = ValuePolicyTable(H, rho, values, sections["policy"], capped)
        return mdp, table
    finally:
        r.close()
