"""Independent ground truth for tests: exhaustive enumeration and closed forms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost import CostMatrix
from .linalg import SparseSymmetric

MAX_ENUM_DIM = 24


@dataclass(frozen=True)
class BruteForceResult:
    optimum: float
    argmax: np.ndarray
    evaluations: int


def _gray_flip_sequence(bits: int):
    """Index of the bit flipped at step i of a binary-reflected Gray walk."""
    for i in range(1, 1 << bits):
        yield (i & -i).bit_length() - 1


def brute_force_iqp(c: CostMatrix) -> BruteForceResult:
    """Exact max of x^T C x over x in {-1,1}^n; the x ~ -x symmetry fixes x_n = +1.

    Gray-code walk with an O(n) objective update per flip. Ties resolve to the
    lexicographically smallest sign vector.
    """
    n = c.dim
    if n > MAX_ENUM_DIM:
        raise ValueError(f"enumeration limited to dim <= {MAX_ENUM_DIM}")
    dense = c.raw.to_dense()
    x = np.ones(n)
    grad = dense @ x
    value = float(x @ grad)
    best_val = value
    best_x = x.copy()
    for i in _gray_flip_sequence(n - 1):
        value += -4.0 * x[i] * grad[i] + 4.0 * dense[i, i]
        grad -= 2.0 * x[i] * dense[:, i]
        x[i] = -x[i]
        if value > best_val or (value == best_val and tuple(x) < tuple(best_x)):
            best_val = value
            best_x = x.copy()
    if tuple(-best_x) < tuple(best_x) and n >= 1:
        best_x = -best_x
    return BruteForceResult(optimum=best_val, argmax=best_x, evaluations=2**n)


def brute_force_qubo(c: CostMatrix) -> BruteForceResult:
    """Exact max of z^T C z over z in {0,1}^n by a Gray-code walk."""
    n = c.dim
    if n > MAX_ENUM_DIM:
        raise ValueError(f"enumeration limited to dim <= {MAX_ENUM_DIM}")
    dense = c.raw.to_dense()
    z = np.zeros(n)
    grad = np.zeros(n)
    value = 0.0
    best_val = value
    best_z = z.copy()
    for i in _gray_flip_sequence(n):
        s = 1.0 - 2.0 * z[i]
        value += 2.0 * s * grad[i] + dense[i, i]
        grad += s * dense[:, i]
        z[i] = 1.0 - z[i]
        if value > best_val or (value == best_val and tuple(z) < tuple(best_z)):
            best_val = value
            best_z = z.copy()
    return BruteForceResult(optimum=best_val, argmax=best_z, evaluations=2**n)


def iqp_to_qubo_value(c: CostMatrix, x: np.ndarray) -> float:
    """z^T C z at z = (x+e)/2 through the affine identity
    (x^T C x + 2 e^T C x + e^T C e)/4, tracking the induced linear terms."""
    dense = c.raw.to_dense()
    e = np.ones(c.dim)
    return float(x @ dense @ x + 2.0 * e @ dense @ x + e @ dense @ e) / 4.0


def closed_form_instance(tag: str, n: int = 4) -> CostMatrix:
    """Analytically solved instances: pair coupling and +/- complete graphs."""
    if tag == "pair_coupling":
        return CostMatrix(SparseSymmetric.from_entries(2, [(0, 1, 1.0)]))
    if tag in ("complete_graph_pos", "complete_graph_neg"):
        if n < 2:
            raise ValueError("complete graph instances need n >= 2")
        if tag == "complete_graph_neg" and n % 2:
            raise ValueError("complete_graph_neg requires even n")
        sign = 1.0 if tag == "complete_graph_pos" else -1.0
        entries = [(i, j, sign) for i in range(n) for j in range(i + 1, n)]
        return CostMatrix(SparseSymmetric.from_entries(n, entries))
    raise ValueError(f"unknown instance tag: {tag}")


def closed_form_sdo(tag: str, n: int = 4) -> float:
    """Optimal value of the unit-diagonal relaxation for the tagged instance.

    pair_coupling: X = ee^T gives 2, and 2 X_12 <= 2 bounds it.
    complete_graph_pos: X = ee^T gives n(n-1); |X_ij| <= 1 bounds it.
    complete_graph_neg: X = (nI - ee^T)/(n-1) gives n; tr(CX) = n - e^T X e <= n.
    """
    if tag == "pair_coupling":
        return 2.0
    if tag == "complete_graph_pos":
        return float(n * (n - 1))
    if tag == "complete_graph_neg":
        if n % 2:
            raise ValueError("complete_graph_neg requires even n")
        return float(n)
    raise ValueError(f"unknown instance tag: {tag}")
