"""Dense-matrix kernels: multiplication, small analytic inverses, and the
Gauss-Jordan verification oracle.

Matrices are plain float64 C-order ``numpy.ndarray`` objects; block views are
ordinary numpy slices of a parent array, so partitioned algorithms never copy
element data unless they say so.

Every multiplication kernel accumulates over the inner dimension in fixed
ascending index order, with any -1 sign folded into the left factor.  That
single convention is what makes in-place and out-of-place products bitwise
identical and keeps the step engine's output independent of worker count.
"""

from __future__ import annotations

import operator
import struct
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    FormatError,
    ScratchTooSmall,
    SingularBlock,
    SingularMatrix,
)

# Alias checks on every kernel call; benchmarks switch them off the way a
# release build drops asserts.
debug_checks = True

_BMAT_MAGIC = b"BMAT"


@contextmanager
def release_mode():
    """Temporarily disable debug alias checks (used around timed runs)."""
    global debug_checks
    saved = debug_checks
    debug_checks = False
    try:
        yield
    finally:
        debug_checks = saved


def _disjoint(x: np.ndarray, y: np.ndarray) -> bool:
    """True when the views cannot write over each other.

    Bounds check first; the exact (potentially slow) overlap solve runs
    only for views whose address ranges interleave.
    """
    if not np.may_share_memory(x, y):
        return True
    return not np.shares_memory(x, y)


@dataclass
class OpCounters:
    """Tally of block-level work done by an inversion run.

    ``multiplies`` counts two-matrix products (a fused multiply-accumulate
    counts as both a multiply and a reduction); ``reductions`` counts block
    additions, including the dedicated Schur-complement accumulation which
    is a reduction only; ``inversions`` counts leaf/base inversions.
    ``peak_scratch`` is the high-water mark of auxiliary scalars allocated
    by the algorithm itself (kernel-internal temporaries are not charged,
    since they depend on how a product is scheduled, not on the algorithm).
    """

    multiplies: int = 0
    inversions: int = 0
    reductions: int = 0
    peak_scratch: int = 0
    schur_scratch: int = 0
    nodes: int = 0
    _current_scratch: int = field(default=0, repr=False)

    def alloc(self, scalars: int) -> None:
        self._current_scratch += scalars
        if self._current_scratch > self.peak_scratch:
            self.peak_scratch = self._current_scratch

    def release(self, scalars: int) -> None:
        self._current_scratch -= scalars

    def merge(self, other: "OpCounters") -> None:
        self.multiplies += other.multiplies
        self.inversions += other.inversions
        self.reductions += other.reductions
        self.schur_scratch += other.schur_scratch
        self.nodes += other.nodes
        self.peak_scratch = max(self.peak_scratch, other.peak_scratch)


def as_matrix(data) -> np.ndarray:
    """Coerce to a 2-D float64 array without copying when already one."""
    m = np.asarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D array, got ndim={m.ndim}")
    return m


# Plain Python loops beat numpy dispatch only for genuinely small blocks
# (crossover tuned empirically); wide row panels vectorize well even when
# the element count is low.  Both paths apply the same IEEE-754 operations
# in the same ascending-k order, so they are bitwise interchangeable.
_SMALL_PRODUCT = 512
_SMALL_EDGE = 8


def _mm_acc(a: np.ndarray, b: np.ndarray, out: np.ndarray, negate: bool = False) -> None:
    """out += (+-1) * a @ b, inner index ascending, sign folded into a.

    Small products run as Python loops, large ones as vectorized column
    updates; both apply the same IEEE-754 operations in the same order per
    output element, so the paths are bitwise interchangeable.
    """
    rows, inner = a.shape
    cols = out.shape[1]
    if rows <= _SMALL_EDGE and cols <= _SMALL_EDGE and rows * cols * inner <= _SMALL_PRODUCT:
        al = a.tolist()
        if negate:
            al = [[-v for v in row] for row in al]
        bt = list(zip(*b.tolist()))
        out[...] = [
            [sum(map(operator.mul, ai, bj), o) for o, bj in zip(oi, bt)]
            for ai, oi in zip(al, out.tolist())
        ]
        return
    if negate:
        a = -a  # negating the factor up front folds the sign into every term
    tmp = np.empty_like(out)
    for k in range(inner):
        np.multiply(a[:, k, None], b[k], out=tmp)
        np.add(out, tmp, out=out)


def multiply(
    a: np.ndarray,
    b: np.ndarray,
    out: np.ndarray,
    accumulate: bool = False,
    negate: bool = False,
    counters: OpCounters | None = None,
) -> None:
    """out = (+-1) * a @ b, or out += ... when ``accumulate``.

    ``out`` must not alias ``a`` or ``b``.  Accumulation over the inner
    dimension runs in fixed ascending index order.
    """
    if (
        a.shape[1] != b.shape[0]
        or out.shape[0] != a.shape[0]
        or out.shape[1] != b.shape[1]
    ):
        raise DimensionMismatch(f"multiply {a.shape} x {b.shape} -> {out.shape}")
    if debug_checks:
        assert _disjoint(out, a), "out aliases a"
        assert _disjoint(out, b), "out aliases b"
    if not accumulate:
        out[...] = 0.0
    _mm_acc(a, b, out, negate)
    if counters is not None:
        counters.multiplies += 1
        if accumulate:
            counters.reductions += 1


def schur_accumulate(
    dest: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    counters: OpCounters | None = None,
) -> None:
    """dest += x @ y as a single reduction (Schur-complement formation).

    Same summation order as :func:`multiply`; counted as a reduction only,
    because the combined-pivot paths and the step engine treat complement
    formation as its own operation class, not as one of their products.
    """
    if x.shape[1] != y.shape[0] or dest.shape != (x.shape[0], y.shape[1]):
        raise DimensionMismatch(f"schur_accumulate {x.shape} x {y.shape} -> {dest.shape}")
    if debug_checks:
        assert _disjoint(dest, x), "dest aliases x"
        assert _disjoint(dest, y), "dest aliases y"
    _mm_acc(x, y, dest)
    if counters is not None:
        counters.reductions += 1


def multiply_inplace_left(
    a_inv: np.ndarray,
    target: np.ndarray,
    row_scratch: np.ndarray,
    negate: bool = False,
    counters: OpCounters | None = None,
) -> None:
    """target <- (+-1) * a_inv @ target using only a row-sized buffer.

    Processed column by column; each new column is accumulated in
    ``row_scratch`` in the same ascending inner order as :func:`multiply`,
    so the result is bitwise identical to the out-of-place product.
    """
    n = target.shape[0]
    if a_inv.shape != (n, n):
        raise DimensionMismatch(f"inplace left {a_inv.shape} on {target.shape}")
    if row_scratch.shape[0] < n:
        raise ScratchTooSmall(f"need {n} scalars, have {row_scratch.shape[0]}")
    if debug_checks:
        assert _disjoint(row_scratch, target)
        assert _disjoint(row_scratch, a_inv)
    s = row_scratch[:n]
    for j in range(target.shape[1]):
        col = target[:, j]
        s[:] = 0.0
        for k in range(n):
            ak = -a_inv[:, k] if negate else a_inv[:, k]
            s += ak * col[k]
        col[:] = s
    if counters is not None:
        counters.multiplies += 1


def multiply_inplace_right(
    target: np.ndarray,
    a_inv: np.ndarray,
    row_scratch: np.ndarray,
    negate: bool = False,
    counters: OpCounters | None = None,
) -> None:
    """target <- (+-1) * target @ a_inv, row by row, row-sized buffer only."""
    n = target.shape[1]
    if a_inv.shape != (n, n):
        raise DimensionMismatch(f"inplace right {target.shape} on {a_inv.shape}")
    if row_scratch.shape[0] < n:
        raise ScratchTooSmall(f"need {n} scalars, have {row_scratch.shape[0]}")
    if debug_checks:
        assert _disjoint(row_scratch, target)
        assert _disjoint(row_scratch, a_inv)
    s = row_scratch[:n]
    for i in range(target.shape[0]):
        row = target[i, :]
        s[:] = 0.0
        for k in range(n):
            ak = -a_inv[k, :] if negate else a_inv[k, :]
            s += row[k] * ak
        row[:] = s
    if counters is not None:
        counters.multiplies += 1


def singularity_tolerance(m) -> float:
    """Scale-aware determinant threshold for the analytic inverses."""
    if isinstance(m, np.ndarray):
        n = m.shape[0]
        amax = float(np.max(np.abs(m))) if m.size else 0.0
    else:
        n = len(m)
        amax = max(abs(v) for row in m for v in row) if n else 0.0
    return 1e-12 * n * n * amax**n


def _inv2(m: np.ndarray, out: np.ndarray) -> None:
    (a, b), (c, d) = m.tolist()
    det = a * d - b * c
    if abs(det) <= singularity_tolerance([[a, b], [c, d]]):
        raise SingularBlock("A", path=[])
    r = 1.0 / det
    out[...] = [[d * r, -b * r], [-c * r, a * r]]


def _inv3(m: np.ndarray, out: np.ndarray) -> None:
    rows = m.tolist()
    (a00, a01, a02), (a10, a11, a12), (a20, a21, a22) = rows
    c00 = a11 * a22 - a12 * a21
    c01 = -(a10 * a22 - a12 * a20)
    c02 = a10 * a21 - a11 * a20
    det = a00 * c00 + a01 * c01 + a02 * c02
    if abs(det) <= singularity_tolerance(rows):
        raise SingularBlock("A", path=[])
    r = 1.0 / det
    c10 = -(a01 * a22 - a02 * a21)
    c11 = a00 * a22 - a02 * a20
    c12 = -(a00 * a21 - a01 * a20)
    c20 = a01 * a12 - a02 * a11
    c21 = -(a00 * a12 - a02 * a10)
    c22 = a00 * a11 - a01 * a10
    # adjugate = cofactor matrix transposed
    out[...] = [
        [c00 * r, c10 * r, c20 * r],
        [c01 * r, c11 * r, c21 * r],
        [c02 * r, c12 * r, c22 * r],
    ]


def _inv4_with_pivot(m: np.ndarray, out: np.ndarray, use_d: bool) -> None:
    """4x4 inverse as a 2x2-blocked pivot application with analytic 2x2s."""
    a, b = m[:2, :2], m[:2, 2:]
    c, d = m[2:, :2], m[2:, 2:]
    piv = np.empty((2, 2))
    schur = np.empty((2, 2))
    schur_inv = np.empty((2, 2))
    if not use_d:
        _inv2(a, piv)  # raises SingularBlock("A") when unusable
        n_pb = np.empty((2, 2))
        multiply(piv, b, n_pb, negate=True)  # -A^-1 B
        cp = np.empty((2, 2))
        multiply(c, piv, cp)  # C A^-1
        schur[:] = d
        schur_accumulate(schur, c, n_pb)  # S_A = D - C A^-1 B
        try:
            _inv2(schur, schur_inv)
        except SingularBlock:
            raise SingularBlock("SchurA", path=[]) from None
        t = np.empty((2, 2))
        multiply(n_pb, schur_inv, t)  # -A^-1 B S_A^-1
        out[:2, :2] = piv
        multiply(t, cp, out[:2, :2], accumulate=True, negate=True)
        out[:2, 2:] = t
        multiply(schur_inv, cp, out[2:, :2], negate=True)
        out[2:, 2:] = schur_inv
    else:
        try:
            _inv2(d, piv)
        except SingularBlock:
            raise SingularBlock("D", path=[]) from None
        n_pc = np.empty((2, 2))
        multiply(piv, c, n_pc, negate=True)  # -D^-1 C
        bp = np.empty((2, 2))
        multiply(b, piv, bp)  # B D^-1
        schur[:] = a
        schur_accumulate(schur, b, n_pc)  # S_D = A - B D^-1 C
        try:
            _inv2(schur, schur_inv)
        except SingularBlock:
            raise SingularBlock("SchurD", path=[]) from None
        t = np.empty((2, 2))
        multiply(n_pc, schur_inv, t)  # -D^-1 C S_D^-1
        out[2:, 2:] = piv
        multiply(t, bp, out[2:, 2:], accumulate=True, negate=True)
        out[2:, :2] = t
        multiply(schur_inv, bp, out[:2, 2:], negate=True)
        out[:2, :2] = schur_inv


def invert_small(m: np.ndarray, out: np.ndarray, counters: OpCounters | None = None) -> None:
    """Closed-form inverse for orders 1-4 into ``out``.

    Orders 1-3 use adjugate/determinant formulas; order 4 is a 2x2-blocked
    pivot application with analytic 2x2 sub-inverses, retried with the
    trailing diagonal block as pivot when the leading one is singular.
    Raises SingularBlock when no usable pivot exists.
    """
    n = m.shape[0]
    if m.shape != (n, n) or out.shape != (n, n) or not 1 <= n <= 4:
        raise DimensionMismatch(f"invert_small on {m.shape} -> {out.shape}")
    if n == 1:
        x = m[0, 0]
        if x == 0.0:  # the scale-aware threshold reduces to exact zero here
            raise SingularBlock("A", path=[])
        out[0, 0] = 1.0 / x
    elif n == 2:
        _inv2(m, out)
    elif n == 3:
        _inv3(m, out)
    else:
        try:
            _inv4_with_pivot(m, out, use_d=False)
        except SingularBlock:
            _inv4_with_pivot(m, out, use_d=True)
    if counters is not None:
        counters.inversions += 1


def gauss_jordan_oracle(m: np.ndarray, counters: OpCounters | None = None) -> np.ndarray:
    """Invert by Gauss-Jordan elimination with partial pivoting.

    Verification oracle only: the blockwise algorithms never call this.
    """
    m = as_matrix(m)
    n = m.shape[0]
    if m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"oracle needs a square matrix, got {m.shape}")
    tol = 1e-12 * n * (float(np.max(np.abs(m))) if m.size else 0.0)
    aug = np.hstack([m.astype(np.float64, copy=True), np.eye(n)])
    for col in range(n):
        pivot_row = col + int(np.argmax(np.abs(aug[col:, col])))
        if abs(aug[pivot_row, col]) <= tol:
            raise SingularMatrix(f"no pivot in column {col}")
        if pivot_row != col:
            aug[[col, pivot_row]] = aug[[pivot_row, col]]
        aug[col, :] /= aug[col, col]
        factors = aug[:, col].copy()
        factors[col] = 0.0
        aug -= np.outer(factors, aug[col, :])
    if counters is not None:
        counters.inversions += 1
    return np.ascontiguousarray(aug[:, n:])


def residual_norm(x: np.ndarray, x_inv: np.ndarray) -> float:
    """max |(x @ x_inv - I)_ij| - the correctness metric for every path."""
    x = as_matrix(x)
    x_inv = as_matrix(x_inv)
    n = x.shape[0]
    if x.shape != x_inv.shape or x.shape[0] != x.shape[1]:
        raise DimensionMismatch(f"residual_norm {x.shape} vs {x_inv.shape}")
    prod = x @ x_inv
    prod[np.diag_indices(n)] -= 1.0
    return float(np.max(np.abs(prod)))


# ---------------------------------------------------------------------------
# Matrix file formats.
#
# Text: first line "rows cols", then rows whitespace-separated lines.
# Binary: magic "BMAT", two u64 little-endian dims, float64 LE row-major.
# ---------------------------------------------------------------------------


def _validate_loaded(m: np.ndarray) -> np.ndarray:
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise FormatError(f"bad matrix shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise FormatError("matrix contains NaN or Inf entries")
    return np.ascontiguousarray(m, dtype=np.float64)


def save_text(m: np.ndarray, path) -> None:
    m = as_matrix(m)
    with open(path, "w") as fh:
        fh.write(f"{m.shape[0]} {m.shape[1]}\n")
        for row in m:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_text(path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FormatError("first line must be 'rows cols'")
        try:
            rows, cols = int(header[0]), int(header[1])
        except ValueError as exc:
            raise FormatError("non-integer dimensions") from exc
        try:
            data = np.loadtxt(fh, ndmin=2, dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"bad matrix body: {exc}") from exc
    if data.shape != (rows, cols):
        raise FormatError(f"header says {(rows, cols)}, body is {data.shape}")
    return _validate_loaded(data)


def matrix_to_bytes(m: np.ndarray) -> bytes:
    m = as_matrix(m)
    header = _BMAT_MAGIC + struct.pack("<QQ", m.shape[0], m.shape[1])
    body = np.ascontiguousarray(m, dtype="<f8").tobytes()
    return header + body


def matrix_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 20 or buf[:4] != _BMAT_MAGIC:
        raise FormatError("missing BMAT magic")
    rows, cols = struct.unpack("<QQ", buf[4:20])
    expected = 20 + rows * cols * 8
    if len(buf) != expected:
        raise FormatError(f"expected {expected} bytes, got {len(buf)}")
    data = np.frombuffer(buf, dtype="<f8", offset=20).reshape(rows, cols)
    return _validate_loaded(data)


def save_binary(m: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(matrix_to_bytes(m))


def load_binary(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return matrix_from_bytes(fh.read())


def save_matrix(m: np.ndarray, path, binary: bool = False) -> None:
    (save_binary if binary else save_text)(m, path)


def load_matrix(path, binary: bool | None = None) -> np.ndarray:
    """Load a matrix, sniffing the BMAT magic when ``binary`` is None."""
    if binary is None:
        with open(path, "rb") as fh:
            binary = fh.read(4) == _BMAT_MAGIC
    return (load_binary if binary else load_text)(path)
