"""Single-level 2x2-block inversion for each pivot choice.

A square matrix split into blocks

    [[A, B],
     [C, D]]

can be inverted around any invertible pivot block whose Schur complement is
also invertible: pivot A uses S_A = D - C A^-1 B, pivot D uses
S_D = A - B D^-1 C, and when B and C are square (counter-diagonal layout)
the analogous S_B = C - D B^-1 A and S_C = B - A C^-1 D apply.  The two
combined forms invert both diagonal (or both counter-diagonal) pivots and
place the Schur inverses directly on the output diagonal, which is what the
recursive and step-scheduled engines build on.

Sub-inversions are delegated to an injected ``invert_sub(block, out)``
callback so the same code serves leaf analytic inversion, recursion, and
oracle-based testing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import OpCounters, multiply, schur_accumulate
from .errors import AllPivotsSingular, DimensionMismatch, SingularBlock

DIAGONAL = "diagonal-square"
COUNTERDIAGONAL = "counterdiagonal-square"


@dataclass
class BlockQuad:
    """One 2x2 block view of a square matrix.

    In the diagonal layout ``a`` and ``d`` are square; in the
    counter-diagonal layout ``b`` and ``c`` are (the column split mirrors the
    row split).
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    layout: str = DIAGONAL

    def __post_init__(self):
        a, b, c, d = self.a, self.b, self.c, self.d
        if a.shape[0] != b.shape[0] or c.shape[0] != d.shape[0]:
            raise DimensionMismatch("block row heights disagree")
        if a.shape[1] != c.shape[1] or b.shape[1] != d.shape[1]:
            raise DimensionMismatch("block column widths disagree")
        if self.layout == DIAGONAL:
            if a.shape[0] != a.shape[1] or d.shape[0] != d.shape[1]:
                raise DimensionMismatch("diagonal layout needs square A and D")
        elif self.layout == COUNTERDIAGONAL:
            if b.shape[0] != b.shape[1] or c.shape[0] != c.shape[1]:
                raise DimensionMismatch("counter-diagonal layout needs square B and C")
        else:
            raise DimensionMismatch(f"unknown layout {self.layout!r}")

    @property
    def order(self) -> int:
        return self.a.shape[0] + self.c.shape[0]


@dataclass
class SchurScratch:
    """Workspaces for the combined forms: schur_a sized like D, schur_d like A."""

    schur_a: np.ndarray
    schur_d: np.ndarray

    @classmethod
    def for_quad(cls, q: BlockQuad) -> "SchurScratch":
        if q.layout == DIAGONAL:
            return cls(np.empty_like(q.d), np.empty_like(q.a))
        return cls(np.empty_like(q.c), np.empty_like(q.b))


def diagonal_quad(m: np.ndarray, split: int) -> BlockQuad:
    """Split rows and columns of ``m`` at ``split`` (A and D square)."""
    if not 1 <= split < m.shape[0] or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"split {split} of {m.shape}")
    return BlockQuad(
        m[:split, :split], m[:split, split:], m[split:, :split], m[split:, split:]
    )


def counterdiagonal_quad(m: np.ndarray, split: int) -> BlockQuad:
    """Split rows at ``split`` and columns at order - split (B and C square)."""
    n = m.shape[0]
    if not 1 <= split < n or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"split {split} of {m.shape}")
    cs = n - split
    return BlockQuad(
        m[:split, :cs], m[:split, cs:], m[split:, :cs], m[split:, cs:],
        layout=COUNTERDIAGONAL,
    )


def _sub_inverse(invert_sub, block, label):
    # Leaf/base inversions are tallied by the callback itself, not here.
    out = np.empty_like(block)
    try:
        invert_sub(block, out)
    except SingularBlock as exc:
        raise SingularBlock(label, path=exc.path) from None
    return out


def invert_via_a(
    q: BlockQuad,
    invert_sub,
    out: np.ndarray,
    counters: OpCounters | None = None,
) -> None:
    """Invert around pivot A: six block products, two reductions.

    -A^-1 B and C A^-1 are formed first and reused for every remaining term.
    """
    _require(q, DIAGONAL, out)
    p = q.a.shape[0]
    a_inv = _sub_inverse(invert_sub, q.a, "A")
    n_ab = np.empty_like(q.b)
    multiply(a_inv, q.b, n_ab, negate=True, counters=counters)  # -A^-1 B
    ca = np.empty_like(q.c)
    multiply(q.c, a_inv, ca, counters=counters)  # C A^-1
    s_a = q.d.copy()
    multiply(q.c, n_ab, s_a, accumulate=True, counters=counters)  # S_A = D - C A^-1 B
    s_a_inv = _sub_inverse(invert_sub, s_a, "SchurA")
    out01 = out[:p, p:]
    multiply(n_ab, s_a_inv, out01, counters=counters)  # -A^-1 B S_A^-1
    out[:p, :p] = a_inv
    multiply(out01, ca, out[:p, :p], accumulate=True, negate=True, counters=counters)
    multiply(s_a_inv, ca, out[p:, :p], negate=True, counters=counters)
    out[p:, p:] = s_a_inv


def invert_via_d(
    q: BlockQuad,
    invert_sub,
    out: np.ndarray,
    counters: OpCounters | None = None,
) -> None:
    """Invert around pivot D with S_D = A - B D^-1 C."""
    _require(q, DIAGONAL, out)
    p = q.a.shape[0]
    d_inv = _sub_inverse(invert_sub, q.d, "D")
    n_dc = np.empty_like(q.c)
    multiply(d_inv, q.c, n_dc, negate=True, counters=counters)  # -D^-1 C
    bd = np.empty_like(q.b)
    multiply(q.b, d_inv, bd, counters=counters)  # B D^-1
    s_d = q.a.copy()
    multiply(q.b, n_dc, s_d, accumulate=True, counters=counters)  # S_D = A - B D^-1 C
    s_d_inv = _sub_inverse(invert_sub, s_d, "SchurD")
    out10 = out[p:, :p]
    multiply(n_dc, s_d_inv, out10, counters=counters)  # -D^-1 C S_D^-1
    out[p:, p:] = d_inv
    multiply(out10, bd, out[p:, p:], accumulate=True, negate=True, counters=counters)
    multiply(s_d_inv, bd, out[:p, p:], negate=True, counters=counters)
    out[:p, :p] = s_d_inv


def invert_via_b(
    q: BlockQuad,
    invert_sub,
    out: np.ndarray,
    counters: OpCounters | None = None,
) -> None:
    """Invert around square off-diagonal pivot B with S_B = C - D B^-1 A."""
    _require(q, COUNTERDIAGONAL, out)
    p = q.b.shape[0]  # rows of the top block row
    w = q.c.shape[0]  # rows of the bottom block row
    b_inv = _sub_inverse(invert_sub, q.b, "B")
    n_ba = np.empty_like(q.a)
    multiply(b_inv, q.a, n_ba, negate=True, counters=counters)  # -B^-1 A
    db = np.empty_like(q.d)
    multiply(q.d, b_inv, db, counters=counters)  # D B^-1
    s_b = q.c.copy()
    multiply(q.d, n_ba, s_b, accumulate=True, counters=counters)  # S_B = C - D B^-1 A
    s_b_inv = _sub_inverse(invert_sub, s_b, "SchurB")
    out11 = out[w:, p:]
    multiply(n_ba, s_b_inv, out11, counters=counters)  # -B^-1 A S_B^-1
    out[w:, :p] = b_inv
    multiply(out11, db, out[w:, :p], accumulate=True, negate=True, counters=counters)
    multiply(s_b_inv, db, out[:w, :p], negate=True, counters=counters)
    out[:w, p:] = s_b_inv


def invert_via_c(
    q: BlockQuad,
    invert_sub,
    out: np.ndarray,
    counters: OpCounters | None = None,
) -> None:
    """Invert around square off-diagonal pivot C with S_C = B - A C^-1 D."""
    _require(q, COUNTERDIAGONAL, out)
    p = q.b.shape[0]
    w = q.c.shape[0]
    c_inv = _sub_inverse(invert_sub, q.c, "C")
    n_cd = np.empty_like(q.d)
    multiply(c_inv, q.d, n_cd, negate=True, counters=counters)  # -C^-1 D
    ac = np.empty_like(q.a)
    multiply(q.a, c_inv, ac, counters=counters)  # A C^-1
    s_c = q.b.copy()
    multiply(q.a, n_cd, s_c, accumulate=True, counters=counters)  # S_C = B - A C^-1 D
    s_c_inv = _sub_inverse(invert_sub, s_c, "SchurC")
    out00 = out[:w, :p]
    multiply(n_cd, s_c_inv, out00, counters=counters)  # -C^-1 D S_C^-1
    out[:w, p:] = c_inv
    multiply(out00, ac, out[:w, p:], accumulate=True, negate=True, counters=counters)
    multiply(s_c_inv, ac, out[w:, p:], negate=True, counters=counters)
    out[w:, :p] = s_c_inv


def invert_via_ad(
    q: BlockQuad,
    invert_sub,
    out: np.ndarray,
    scratch: SchurScratch | None = None,
    counters: OpCounters | None = None,
) -> None:
    """Invert both diagonal pivots at once.

    The Schur inverses land directly on the output diagonal (S_D^-1 top
    left, S_A^-1 bottom right) and only four products are needed beyond the
    four sub-inversions; complement formation is a fused reduction.  The
    (A, D) and (S_A, S_D) inversion pairs are mutually independent, as are
    the two final products.
    """
    _require(q, DIAGONAL, out)
    p = q.a.shape[0]
    if scratch is None:
        scratch = SchurScratch.for_quad(q)
    a_inv = _sub_inverse(invert_sub, q.a, "A")
    d_inv = _sub_inverse(invert_sub, q.d, "D")
    n_ab = np.empty_like(q.b)
    multiply(a_inv, q.b, n_ab, negate=True, counters=counters)  # -A^-1 B
    n_dc = np.empty_like(q.c)
    multiply(d_inv, q.c, n_dc, negate=True, counters=counters)  # -D^-1 C
    s_a = scratch.schur_a
    s_a[...] = q.d
    schur_accumulate(s_a, q.c, n_ab, counters)  # S_A = D - C A^-1 B
    s_d = scratch.schur_d
    s_d[...] = q.a
    schur_accumulate(s_d, q.b, n_dc, counters)  # S_D = A - B D^-1 C
    try:
        invert_sub(s_d, out[:p, :p])
    except SingularBlock as exc:
        raise SingularBlock("SchurD", path=exc.path) from None
    try:
        invert_sub(s_a, out[p:, p:])
    except SingularBlock as exc:
        raise SingularBlock("SchurA", path=exc.path) from None
    multiply(n_ab, out[p:, p:], out[:p, p:], counters=counters)  # -A^-1 B S_A^-1
    multiply(n_dc, out[:p, :p], out[p:, :p], counters=counters)  # -D^-1 C S_D^-1


def invert_via_bc(
    q: BlockQuad,
    invert_sub,
    out: np.ndarray,
    scratch: SchurScratch | None = None,
    counters: OpCounters | None = None,
) -> None:
    """Counter-diagonal twin of invert_via_ad: S_B^-1 and S_C^-1 land on the
    output counter-diagonal; four products beyond the four sub-inversions."""
    _require(q, COUNTERDIAGONAL, out)
    p = q.b.shape[0]
    w = q.c.shape[0]
    if scratch is None:
        scratch = SchurScratch.for_quad(q)
    b_inv = _sub_inverse(invert_sub, q.b, "B")
    c_inv = _sub_inverse(invert_sub, q.c, "C")
    n_ba = np.empty_like(q.a)
    multiply(b_inv, q.a, n_ba, negate=True, counters=counters)  # -B^-1 A
    n_cd = np.empty_like(q.d)
    multiply(c_inv, q.d, n_cd, negate=True, counters=counters)  # -C^-1 D
    s_b = scratch.schur_a
    s_b[...] = q.c
    schur_accumulate(s_b, q.d, n_ba, counters)  # S_B = C - D B^-1 A
    s_c = scratch.schur_d
    s_c[...] = q.b
    schur_accumulate(s_c, q.a, n_cd, counters)  # S_C = B - A C^-1 D
    try:
        invert_sub(s_b, out[:w, p:])
    except SingularBlock as exc:
        raise SingularBlock("SchurB", path=exc.path) from None
    try:
        invert_sub(s_c, out[w:, :p])
    except SingularBlock as exc:
        raise SingularBlock("SchurC", path=exc.path) from None
    multiply(n_cd, out[w:, :p], out[:w, :p], counters=counters)  # -C^-1 D S_C^-1
    multiply(n_ba, out[:w, p:], out[w:, p:], counters=counters)  # -B^-1 A S_B^-1


_FALLBACK_ORDER = (
    ("via_a", invert_via_a, diagonal_quad),
    ("via_d", invert_via_d, diagonal_quad),
    ("via_b", invert_via_b, counterdiagonal_quad),
    ("via_c", invert_via_c, counterdiagonal_quad),
)


def invert_with_fallback(
    m: np.ndarray,
    split: int,
    out: np.ndarray,
    invert_sub=None,
    counters: OpCounters | None = None,
) -> str:
    """Try each pivot formula in the fixed order A, D, B, C.

    The off-diagonal pivots re-split the columns at order - split so that B
    and C are square.  Returns the name of the formula that succeeded;
    raises AllPivotsSingular when none does.
    """
    if invert_sub is None:
        from .core import invert_small

        invert_sub = invert_small
    failures = []
    for name, formula, make_quad in _FALLBACK_ORDER:
        q = make_quad(m, split)
        try:
            formula(q, invert_sub, out, counters=counters)
            return name
        except SingularBlock as exc:
            failures.append(f"{name}: {exc}")
    raise AllPivotsSingular("; ".join(failures))


def _require(q: BlockQuad, layout: str, out: np.ndarray) -> None:
    if q.layout != layout:
        raise DimensionMismatch(f"formula needs {layout} layout, quad is {q.layout}")
    n = q.order
    if out.shape != (n, n):
        raise DimensionMismatch(f"out {out.shape} for quad order {n}")
