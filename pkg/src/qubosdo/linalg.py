"""Symmetric-matrix primitives: sparse storage, Hadamard masks, Gibbs states.

Dense symmetric matrices are plain float64 ndarrays; helpers below enforce
the symmetry conventions the solver relies on (upper-triangle sparse storage,
post-symmetrization after matrix products, unit-trace Gibbs normalization).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Dimension at or below which the eigendecomposition path is cheaper than a
# degree-ell Taylor evaluation.
DEFAULT_EXACT_CROSSOVER = 256

SYMMETRY_RTOL = 1e-12


@dataclass(frozen=True)
class SparseSymmetric:
    """Upper-triangle coordinate storage of a symmetric matrix.

    Only entries with row <= col are stored; the logical matrix is the
    symmetrization. `row_sparsity` is the max nonzero count over rows of the
    symmetrized matrix.
    """

    dim: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    row_sparsity: int = field(init=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        vals = np.asarray(self.vals, dtype=np.float64)
        if not (rows.shape == cols.shape == vals.shape) or rows.ndim != 1:
            raise ValueError("rows, cols, vals must be 1-d arrays of equal length")
        if rows.size and (rows.min() < 0 or cols.max() >= self.dim or cols.min() < 0 or rows.max() >= self.dim):
            raise ValueError("index out of range")
        if np.any(rows > cols):
            raise ValueError("entries must satisfy row <= col (upper triangle)")
        keys = rows * self.dim + cols
        if np.unique(keys).size != keys.size:
            raise ValueError("duplicate (row, col) entries")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "vals", vals)
        counts = np.zeros(self.dim, dtype=np.int64)
        np.add.at(counts, rows, 1)
        off = rows != cols
        np.add.at(counts, cols[off], 1)
        object.__setattr__(self, "row_sparsity", int(counts.max()) if rows.size else 0)

    @property
    def nnz(self) -> int:
        return int(self.rows.size)

    @staticmethod
    def from_entries(dim: int, entries) -> "SparseSymmetric":
        """Build from an iterable of (row, col, value); row <= col required."""
        if entries:
            r, c, v = map(np.asarray, zip(*entries))
        else:
            r = c = v = np.zeros(0)
        return SparseSymmetric(dim, r, c, v)

    @staticmethod
    def from_dense(a: np.ndarray, tol: float = 0.0) -> "SparseSymmetric":
        a = np.asarray(a, dtype=np.float64)
        n = a.shape[0]
        iu, ju = np.triu_indices(n)
        v = a[iu, ju]
        keep = np.abs(v) > tol
        return SparseSymmetric(n, iu[keep], ju[keep], v[keep])

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.dim, self.dim))
        a[self.rows, self.cols] = self.vals
        a[self.cols, self.rows] = self.vals
        return a

    def scaled(self, factor: float) -> "SparseSymmetric":
        return SparseSymmetric(self.dim, self.rows, self.cols, self.vals * factor)

    def padded(self, extra: int = 1) -> "SparseSymmetric":
        """Same entries embedded in a (dim+extra)-dimensional zero matrix."""
        return SparseSymmetric(self.dim + extra, self.rows, self.cols, self.vals)


@dataclass(frozen=True)
class GibbsState:
    """Unit-trace PSD matrix exp(-H)/tr(exp(-H)) plus its construction error bound."""

    matrix: np.ndarray
    trace_norm_error_bound: float

    def validate(self, trace_tol: float = 1e-10, eig_tol: float = -1e-10) -> None:
        tr = float(np.trace(self.matrix))
        if abs(tr - 1.0) > trace_tol:
            raise ValueError(f"Gibbs state trace {tr} deviates from 1")
        lam = float(np.linalg.eigvalsh(self.matrix)[0])
        if lam < eig_tol:
            raise ValueError(f"Gibbs state has eigenvalue {lam} below tolerance")


@dataclass(frozen=True)
class TaylorPlan:
    """Truncation degree for the series exponential of a bounded symmetric matrix."""

    degree_ell: int
    norm_bound: float
    target_error: float


def check_symmetric(a: np.ndarray, rtol: float = SYMMETRY_RTOL) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    scale = float(np.abs(a).max()) if a.size else 0.0
    if scale and float(np.abs(a - a.T).max()) > rtol * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    return a


def symmetrize(a: np.ndarray) -> np.ndarray:
    return (a + a.T) / 2.0


def frobenius_norm(m: SparseSymmetric) -> float:
    """Frobenius norm of the symmetrized matrix (off-diagonal entries count twice)."""
    if m.nnz == 0:
        return 0.0
    sq = m.vals * m.vals
    off = m.rows != m.cols
    return math.sqrt(float(sq.sum() + sq[off].sum()))


def hadamard_apply(q_diag: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Entrywise product with the mask (ee^T - I) + diag(q): only the diagonal changes."""
    q = np.asarray(q_diag, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (q.size, q.size):
        raise ValueError("dimension mismatch between q_diag and matrix")
    out = a.copy()
    idx = np.arange(q.size)
    out[idx, idx] = q * a[idx, idx]
    return out


def trace_product(a: np.ndarray, b: np.ndarray) -> float:
    """tr(ab) for symmetric a, b, evaluated as the entrywise sum sum_ij a_ij b_ij."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("dimension mismatch")
    return float(np.einsum("ij,ij->", a, b))


def sparse_trace_product(m: SparseSymmetric, b: np.ndarray, q_diag: np.ndarray | None = None) -> float:
    """tr((Q o M) b) evaluated over stored entries only, O(nnz).

    With q_diag None the plain tr(M b) is returned. b may exceed m.dim (padded
    solves); the extra rows of the logical M are zero.
    """
    if b.shape[0] < m.dim:
        raise ValueError("dense operand smaller than sparse operand")
    if m.nnz == 0:
        return 0.0
    picked = b[m.rows, m.cols]
    off = m.rows != m.cols
    total = 2.0 * float(np.dot(m.vals[off], picked[off]))
    dg = ~off
    if np.any(dg):
        dvals = m.vals[dg]
        if q_diag is not None:
            dvals = dvals * np.asarray(q_diag)[m.rows[dg]]
        total += float(np.dot(dvals, picked[dg]))
    return total


def quadratic_form(m: SparseSymmetric, x: np.ndarray) -> float:
    """x^T M x over the symmetrized matrix, O(nnz)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (m.dim,):
        raise ValueError("dimension mismatch")
    if m.nnz == 0:
        return 0.0
    prod = m.vals * x[m.rows] * x[m.cols]
    off = m.rows != m.cols
    return float(2.0 * prod[off].sum() + prod[~off].sum())


def taylor_plan(norm_bound: float, dim: int, target_error: float) -> TaylorPlan:
    """Smallest even ell with (ell+1)(log2(ell+1) - 1) >= 2*norm_bound + log2(dim) + log2(1/target_error)."""
    if norm_bound < 0:
        raise ValueError("norm_bound must be nonnegative")
    if dim < 2:
        raise ValueError("dim must be at least 2")
    if not (0.0 < target_error < 1.0):
        raise ValueError("target_error must lie in (0, 1)")
    rhs = 2.0 * norm_bound + math.log2(dim) + math.log2(1.0 / target_error)
    ell = 2
    while (ell + 1) * (math.log2(ell + 1) - 1.0) < rhs:
        ell += 2
    return TaylorPlan(degree_ell=ell, norm_bound=norm_bound, target_error=target_error)


def _gershgorin_interval(a: np.ndarray) -> tuple[float, float]:
    d = np.diag(a)
    radius = np.sum(np.abs(a), axis=1) - np.abs(d)
    return float((d - radius).min()), float((d + radius).max())


def _stabilizing_shift(h: np.ndarray, norm_bound: float) -> tuple[np.ndarray, float]:
    """Shift by the diagonal mean (zero trace => tr(exp) >= n by Jensen), then
    re-center by the Gershgorin midpoint when the spectrum sits far off zero.

    The Gibbs map is shift invariant, so any shift is free; the re-centering
    keeps the alternating series' largest terms commensurate with the
    normalizer, which the error analysis in gibbs_from_hamiltonian assumes.
    """
    n = h.shape[0]
    lam = float(np.mean(np.diag(h)))
    hs = h - lam * np.eye(n)
    g_lo, g_hi = _gershgorin_interval(hs)
    center = 0.5 * (g_lo + g_hi)
    if abs(center) > 2.0:
        hs = hs - center * np.eye(n)
        g_lo, g_hi = g_lo - center, g_hi - center
    bound = min(norm_bound + abs(lam) + abs(center), max(abs(g_lo), abs(g_hi)))
    return hs, bound


def _sound_even_degree(beta: float, dim: int, target: float, trace_mean: float) -> int:
    """Smallest even ell certifying trace-norm error <= target via the classical
    remainder bound: with r = beta^(ell+1)/(ell+1)! * (ell+2)/(ell+2-beta) and
    tr(exp(-H)) >= n exp(-mu), the normalized-state error is at most 2 r e^mu."""
    log_target = math.log(target / 2.0) - max(trace_mean, 0.0)
    ell = 2
    while True:
        if ell + 2 > beta:
            log_r = (ell + 1) * math.log(beta) - math.lgamma(ell + 2) if beta > 0 else -math.inf
            log_r += math.log((ell + 2) / (ell + 2 - beta))
            if log_r <= log_target:
                return ell
        ell += 2


def gibbs_exact(h: np.ndarray) -> GibbsState:
    """exp(-h)/tr(exp(-h)) via full symmetric eigendecomposition."""
    h = check_symmetric(h)
    w, v = np.linalg.eigh(symmetrize(h))
    e = np.exp(-(w - w.min()))
    rho = (v * e) @ v.T
    tr = float(np.trace(rho))
    if not np.isfinite(tr) or tr <= 0:
        raise FloatingPointError("eigendecomposition produced a non-positive trace")
    rho = symmetrize(rho / tr)
    return GibbsState(matrix=rho, trace_norm_error_bound=0.0)


def gibbs_from_hamiltonian(h: np.ndarray, norm_bound: float, target_error: float) -> GibbsState:
    """Truncated-series Gibbs state T_ell/tr(T_ell), trace-norm error <= target_error.

    Requires ||h|| <= norm_bound (caller-tracked; the solver uses the l1 norm
    of its update coefficients). Evaluation is Horner-style on the diagonal
    mean-shifted matrix, with a symmetrization after every product.
    """
    h = check_symmetric(h)
    n = h.shape[0]
    hs, bound = _stabilizing_shift(h, norm_bound)
    plan = taylor_plan(bound, n, target_error)
    # The planning inequality under-selects the degree at moderate norms (its
    # Stirling constant assumes natural logs and drops a log(norm) term); the
    # classical remainder bound restores the contracted fidelity.
    degree = max(plan.degree_ell,
                 _sound_even_degree(bound, n, target_error, float(np.trace(hs)) / n))
    eye = np.eye(n)
    neg = -hs
    acc = eye.copy()
    for k in range(degree, 0, -1):
        acc = eye + (neg / k) @ acc
        acc = symmetrize(acc)
        peak = float(np.abs(acc).max())
        if not np.isfinite(peak):
            raise FloatingPointError("non-finite entries in truncated exponential")
        if peak > 1e250:
            # Keeps later products representable; the final normalization
            # cancels any positive rescaling.
            acc /= peak
    tr = float(np.trace(acc))
    if tr <= 0 or not np.isfinite(tr):
        raise FloatingPointError("truncated exponential has non-positive trace; norm bound violated")
    rho = symmetrize(acc / tr)
    return GibbsState(matrix=rho, trace_norm_error_bound=target_error)


def gibbs(h: np.ndarray, norm_bound: float, target_error: float,
          exact_crossover: int = DEFAULT_EXACT_CROSSOVER) -> GibbsState:
    """Gibbs state via the exact path for small matrices, Taylor series otherwise."""
    if h.shape[0] <= exact_crossover:
        return gibbs_exact(h)
    return gibbs_from_hamiltonian(h, norm_bound, target_error)


def trace_norm(a: np.ndarray) -> float:
    """Schatten-1 norm of a symmetric matrix."""
    return float(np.abs(np.linalg.eigvalsh(symmetrize(np.asarray(a, dtype=float)))).sum())
