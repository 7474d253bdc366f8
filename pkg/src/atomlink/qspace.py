"""Truncated composite Hilbert spaces and sparse operator algebra.

The simulator works on tensor products of small subsystems: three-level
atoms and bosonic modes truncated at a finite photon number.  To keep the
long-time master equation runs affordable, a composite space can in
addition be restricted to the subspace of bounded total excitation number
(a global cap).  Excitations are counted per subsystem level: the atomic
levels |0> and |1> carry weight 0, the upper level |2> carries weight 1,
and a mode with n photons carries weight n.

Basis order is lexicographic in the level multi-index with subsystem 0
slowest, i.e. the order produced by iterating the leftmost subsystem in
the outermost loop.  All operators are stored sparse (CSR) and act on the
capped basis directly, so a capped operator equals the uncapped operator
compressed with the basis projection.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "SubsystemSpec",
    "CompositeSpace",
    "SparseOp",
    "DensityMatrix",
    "atom3",
    "mode",
    "build_space",
    "local_operator",
    "embed_product",
]


@dataclass(frozen=True)
class SubsystemSpec:
    """One tensor factor: level count plus the excitation weight of each level."""

    kind: str  # "atom3" or "mode"
    levels: int
    weights: tuple[int, ...]

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("subsystem needs at least one level")
        if len(self.weights) != self.levels:
            raise ValueError("one excitation weight per level required")


def atom3() -> SubsystemSpec:
    """Three-level atom; only the upper level |2> counts as an excitation."""
    return SubsystemSpec(kind="atom3", levels=3, weights=(0, 0, 1))


def mode(n_max: int) -> SubsystemSpec:
    """Bosonic mode truncated at occupation ``n_max`` (n_max >= 1)."""
    if n_max < 1:
        raise ValueError(f"mode truncation must be >= 1, got {n_max}")
    return SubsystemSpec(kind="mode", levels=n_max + 1, weights=tuple(range(n_max + 1)))


class CompositeSpace:
    """Tensor product of subsystems, optionally filtered by total excitation.

    Parameters
    ----------
    subsystems:
        Ordered tensor factors.
    excitation_cap:
        If given, keep only basis states whose summed excitation weight is
        less than or equal to the cap.  ``None`` keeps the full product
        basis.
    """

    def __init__(self, subsystems: Sequence[SubsystemSpec], excitation_cap: int | None = None):
        if not subsystems:
            raise ValueError("at least one subsystem required")
        if excitation_cap is not None and excitation_cap < 0:
            raise ValueError("excitation cap must be nonnegative")
        self.subsystems = tuple(subsystems)
        self.excitation_cap = excitation_cap
        ranges = [range(s.levels) for s in self.subsystems]
        basis = []
        for multi in itertools.product(*ranges):
            if excitation_cap is None or self._weight_of(multi) <= excitation_cap:
                basis.append(multi)
        if not basis:
            raise ValueError("excitation cap removed every basis state")
        self.basis: tuple[tuple[int, ...], ...] = tuple(basis)
        self._index = {multi: k for k, multi in enumerate(self.basis)}

    def _weight_of(self, multi: tuple[int, ...]) -> int:
        return sum(s.weights[lvl] for s, lvl in zip(self.subsystems, multi))

    @property
    def dim(self) -> int:
        return len(self.basis)

    @property
    def n_subsystems(self) -> int:
        return len(self.subsystems)

    def weight(self, k: int) -> int:
        """Total excitation weight of basis state ``k``."""
        return self._weight_of(self.basis[k])

    def index(self, multi: tuple[int, ...]) -> int | None:
        """Basis index of a level multi-index, or ``None`` if capped away."""
        return self._index.get(tuple(multi))

    def weights(self) -> np.ndarray:
        return np.array([self._weight_of(m) for m in self.basis], dtype=int)

    def basis_vector(self, multi: tuple[int, ...]) -> np.ndarray:
        k = self.index(multi)
        if k is None:
            raise ValueError(f"state {multi} is not in the capped basis")
        v = np.zeros(self.dim, dtype=complex)
        v[k] = 1.0
        return v

    def __repr__(self):
        kinds = ",".join(s.kind if s.kind != "mode" else f"mode({s.levels - 1})" for s in self.subsystems)
        return f"CompositeSpace([{kinds}], cap={self.excitation_cap}, dim={self.dim})"


def build_space(subsystems: Sequence[SubsystemSpec], excitation_cap: int | None = None) -> CompositeSpace:
    """Construct a :class:`CompositeSpace`; see the class docstring."""
    return CompositeSpace(subsystems, excitation_cap)


class SparseOp:
    """Thin immutable-ish wrapper around a CSR matrix on a composite space.

    Supports the small operator algebra the model builders need: adjoint,
    scalar multiplication, sums, and products.  Explicitly stored zeros
    (including those produced by exact cancellation) are purged, so the
    stored entries are exactly the nonzero matrix elements.
    """

    __slots__ = ("matrix",)

    def __init__(self, matrix):
        m = sp.csr_matrix(matrix, dtype=complex)
        m.eliminate_zeros()
        m.sum_duplicates()
        if m.shape[0] != m.shape[1]:
            raise ValueError("operators must be square")
        self.matrix = m

    # -- constructors ---------------------------------------------------

    @classmethod
    def zeros(cls, dim: int) -> "SparseOp":
        return cls(sp.csr_matrix((dim, dim), dtype=complex))

    @classmethod
    def identity(cls, dim: int) -> "SparseOp":
        return cls(sp.identity(dim, dtype=complex, format="csr"))

    @classmethod
    def from_entries(cls, dim: int, entries: Iterable[tuple[int, int, complex]]) -> "SparseOp":
        rows, cols, vals = [], [], []
        for r, c, v in entries:
            rows.append(r)
            cols.append(c)
            vals.append(v)
        m = sp.coo_matrix((vals, (rows, cols)), shape=(dim, dim), dtype=complex)
        return cls(m.tocsr())

    # -- basic queries ---------------------------------------------------

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def entries(self) -> Iterator[tuple[int, int, complex]]:
        """Iterate stored (row, col, value) triples."""
        coo = self.matrix.tocoo()
        for r, c, v in zip(coo.row, coo.col, coo.data):
            yield int(r), int(c), complex(v)

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def norm_max(self) -> float:
        """Largest entry magnitude (0 for the zero operator)."""
        if self.matrix.nnz == 0:
            return 0.0
        return float(np.max(np.abs(self.matrix.data)))

    def hermiticity_defect(self) -> float:
        return (self - self.dag()).norm_max()

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        return self.hermiticity_defect() <= tol

    # -- algebra ----------------------------------------------------------

    def dag(self) -> "SparseOp":
        return SparseOp(self.matrix.conjugate().transpose().tocsr())

    def __add__(self, other: "SparseOp") -> "SparseOp":
        return SparseOp(self.matrix + other.matrix)

    def __sub__(self, other: "SparseOp") -> "SparseOp":
        return SparseOp(self.matrix - other.matrix)

    def __neg__(self) -> "SparseOp":
        return SparseOp(-self.matrix)

    def __mul__(self, scalar: complex) -> "SparseOp":
        if isinstance(scalar, SparseOp):
            raise TypeError("use @ for operator products")
        return SparseOp(self.matrix * scalar)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, SparseOp):
            return SparseOp(self.matrix @ other.matrix)
        return self.matrix @ other  # ndarray fallthrough

    def apply(self, vec: np.ndarray) -> np.ndarray:
        return self.matrix @ vec

    def __repr__(self):
        return f"SparseOp(dim={self.dim}, nnz={self.nnz})"


class DensityMatrix:
    """Dense density matrix with cheap self-checks.

    The solvers re-Hermitize as they go, so the stored array should stay
    Hermitian, unit trace and positive to solver accuracy.  ``validate``
    raises when one of those drifts out of tolerance.
    """

    __slots__ = ("array",)

    def __init__(self, array: np.ndarray):
        a = np.asarray(array, dtype=complex)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("density matrix must be square")
        self.array = a

    @classmethod
    def pure(cls, vec: np.ndarray) -> "DensityMatrix":
        v = np.asarray(vec, dtype=complex)
        n = np.linalg.norm(v)
        if n == 0:
            raise ValueError("zero vector has no associated state")
        v = v / n
        return cls(np.outer(v, v.conjugate()))

    @property
    def dim(self) -> int:
        return self.array.shape[0]

    def trace(self) -> float:
        return float(np.real(np.trace(self.array)))

    def trace_error(self) -> float:
        return abs(np.trace(self.array) - 1.0)

    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.array - self.array.conjugate().T)))

    def min_eigenvalue(self) -> float:
        h = 0.5 * (self.array + self.array.conjugate().T)
        return float(np.linalg.eigvalsh(h)[0])

    def hermitized(self) -> "DensityMatrix":
        return DensityMatrix(0.5 * (self.array + self.array.conjugate().T))

    def validate(self, trace_tol: float = 1e-8, herm_tol: float = 1e-10, psd_tol: float = 1e-8) -> None:
        te = self.trace_error()
        if te > trace_tol:
            raise ValueError(f"trace deviates from 1 by {te:.3e} (tol {trace_tol:.1e})")
        hd = self.hermiticity_defect()
        if hd > herm_tol:
            raise ValueError(f"hermiticity defect {hd:.3e} (tol {herm_tol:.1e})")
        ev = self.min_eigenvalue()
        if ev < -psd_tol:
            raise ValueError(f"negative eigenvalue {ev:.3e} (tol {psd_tol:.1e})")

    def expectation(self, op: SparseOp) -> complex:
        return complex(np.trace(op.matrix @ self.array))


def _local_matrix(spec: SubsystemSpec, kind: str, i: int | None, j: int | None) -> np.ndarray:
    d = spec.levels
    m = np.zeros((d, d), dtype=complex)
    if kind == "annihilate":
        if spec.kind != "mode":
            raise ValueError("ladder operators are only defined for modes")
        for n in range(1, d):
            m[n - 1, n] = np.sqrt(n)
    elif kind == "create":
        if spec.kind != "mode":
            raise ValueError("ladder operators are only defined for modes")
        for n in range(1, d):
            m[n, n - 1] = np.sqrt(n)
    elif kind == "number":
        for n in range(d):
            m[n, n] = spec.weights[n] if spec.kind == "mode" else n
    elif kind == "transition":
        if i is None or j is None:
            raise ValueError("transition requires target and source levels")
        if not (0 <= i < d and 0 <= j < d):
            raise ValueError(f"transition levels ({i},{j}) out of range for {d} levels")
        m[i, j] = 1.0
    elif kind == "project":
        if i is None:
            raise ValueError("project requires a level")
        if not (0 <= i < d):
            raise ValueError(f"projector level {i} out of range for {d} levels")
        m[i, i] = 1.0
    else:
        raise ValueError(f"unknown operator kind {kind!r}")
    return m


def local_operator(
    space: CompositeSpace,
    subsystem: int,
    kind: str,
    i: int | None = None,
    j: int | None = None,
) -> SparseOp:
    """Embed a single-subsystem operator into the (possibly capped) space.

    ``kind`` is one of ``annihilate``, ``create``, ``number`` (modes),
    ``transition`` (with target level ``i`` and source level ``j``) or
    ``project`` (level ``i``).  Matrix elements are taken between capped
    basis states only, which is identical to compressing the uncapped
    embedding with the basis projection.
    """
    if not (0 <= subsystem < space.n_subsystems):
        raise ValueError(f"subsystem index {subsystem} out of range")
    local = _local_matrix(space.subsystems[subsystem], kind, i, j)
    return embed_product(space, [(subsystem, local)])


def embed_product(space: CompositeSpace, factors: Sequence[tuple[int, np.ndarray]]) -> SparseOp:
    """Embed a product of local operators acting on distinct subsystems.

    Each factor is ``(subsystem index, local matrix)``.  The result is the
    capped-basis compression of the tensor product of the factors (identity
    elsewhere).  Building multi-factor terms in one call matters on capped
    spaces: the product of two separately capped embeddings can lose paths
    whose intermediate state exceeds the cap, while the direct matrix
    element of the product term does not.
    """
    seen = set()
    prepared = []
    for sub, m in factors:
        if not (0 <= sub < space.n_subsystems):
            raise ValueError(f"subsystem index {sub} out of range")
        if sub in seen:
            raise ValueError("factors must act on distinct subsystems")
        seen.add(sub)
        m = np.asarray(m, dtype=complex)
        d = space.subsystems[sub].levels
        if m.shape != (d, d):
            raise ValueError(f"factor on subsystem {sub} has shape {m.shape}, expected {(d, d)}")
        # nonzero rows per column, precomputed once
        cols = [np.nonzero(m[:, c])[0] for c in range(d)]
        prepared.append((sub, m, cols))

    entries: list[tuple[int, int, complex]] = []
    for col_idx, multi in enumerate(space.basis):
        # branch over nonzero local images, factor by factor
        branches: list[tuple[list[int], complex]] = [(list(multi), 1.0 + 0.0j)]
        for sub, m, cols in prepared:
            src = multi[sub]
            rows = cols[src]
            if len(rows) == 0:
                branches = []
                break
            new_branches = []
            for levels, amp in branches:
                for r in rows:
                    nl = list(levels)
                    nl[sub] = int(r)
                    new_branches.append((nl, amp * m[r, src]))
            branches = new_branches
        for levels, amp in branches:
            row_idx = space.index(tuple(levels))
            if row_idx is not None and amp != 0:
                entries.append((row_idx, col_idx, amp))
    return SparseOp.from_entries(space.dim, entries)
