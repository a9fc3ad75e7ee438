"""Optimization over gamma: bisection against certified bounds, plus rounding.

Bisection decisions: an accepted refinement run moves the lower bracket; a
certified-infeasible run moves the upper bracket. The upper bracket starts a
Lagrangian dual bound min_u [sum(u)/n + lambda_max(C_tilde - diag(u))] (every
u certifies an upper bound on the relaxation optimum, by weak duality on the
diagonal constraints), tightened by a Polyak subgradient loop between probes
so that probes above the optimum are mostly avoided: certifying infeasibility
by iteration-budget exhaustion alone is sound but far too slow at desk scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cost import CostMatrix
from .feasibility import CERT_CAPPED
from .linalg import quadratic_form, sparse_trace_product, symmetrize
from .refine import ConvergenceError, InfeasibleError, RefineConfig, RefinementState, RefinementTuple, refine_solve

# Inner-iteration cap for bracketing probes: a probe that can certify neither
# way inside the cap is treated as an acceptance (the final uncapped solve
# re-certifies and retreats if that was wrong), keeping probes fast without
# giving up soundness of the reported solution.
_PROBE_ITERATION_CAP = 400_000


@dataclass(frozen=True)
class RoundedSolution:
    """Exactly feasible point of the unit-diagonal relaxation."""

    rho_star: np.ndarray
    x_matrix: np.ndarray
    objective: float
    bad_set_size: int


@dataclass
class SearchDiagnostics:
    probes: int = 0
    probe_cap: int = 0
    dual_bound: float = math.inf
    witness_floor: float = -1.0
    retreats: int = 0


class _DualBound:
    """min over diagonal u of sum(u)/n + lambda_max(C - diag(u)); any iterate
    is a certified upper bound for states with exactly uniform diagonal."""

    def __init__(self, c_dense: np.ndarray):
        self.c = c_dense
        self.n = c_dense.shape[0]
        self.u = np.zeros(self.n)
        self.best = self._value(self.u)

    def _value(self, u: np.ndarray) -> float:
        w, v = np.linalg.eigh(self.c - np.diag(u))
        self._top = v[:, -1]
        return float(u.sum()) / self.n + float(w[-1])

    def tighten(self, target: float, floor: float, max_iters: int = 120) -> float:
        """Polyak subgradient steps until the bound drops below `target`.

        `floor` must be a certified lower value (a feasible witness), so the
        Polyak step length (val - floor)/||g||^2 never overshoots to a point
        below the dual optimum.
        """
        u = self.u.copy()
        val = self._value(u)
        for _ in range(max_iters):
            if self.best <= target:
                break
            grad = np.full(self.n, 1.0 / self.n) - self._top**2
            gnorm = float(grad @ grad)
            gap = val - floor
            if gnorm < 1e-30 or gap <= 0.0:
                break
            u = u - (gap / gnorm) * grad
            val = self._value(u)
            if val < self.best:
                self.best = val
                self.u = u.copy()
        return self.best


def _witness_floor(c_tilde_dense: np.ndarray) -> float:
    """Best objective over a few exactly-feasible states (uniform diagonal)."""
    n = c_tilde_dense.shape[0]
    vals = [float(np.trace(c_tilde_dense)) / n]
    w, v = np.linalg.eigh(c_tilde_dense)
    candidates = [np.ones(n), np.where(v[:, -1] >= 0, 1.0, -1.0)]
    for x in candidates:
        vals.append(float(x @ c_tilde_dense @ x) / n)
    return max(vals)


def binary_search_gamma(
    c: CostMatrix,
    epsilon: float,
    cfg: RefineConfig,
    *,
    exact_crossover: int | None = None,
    diagnostics: SearchDiagnostics | None = None,
) -> tuple[float, list[RefinementTuple], RefinementState]:
    """Locate the relaxation optimum on the normalized scale by bisecting gamma.

    Probes run refine_solve at zeta clamped to a quarter of the bracket; the
    certified solution comes from one full-precision solve at the returned
    gamma (retreating by the bracket width if a probe acceptance overshot).
    """
    if not (0.0 < epsilon < 1.0):
        raise ValueError("epsilon must lie in (0, 1)")
    diag = diagnostics if diagnostics is not None else SearchDiagnostics()
    kw = {} if exact_crossover is None else {"exact_crossover": exact_crossover}
    c_tilde = c.c_tilde()
    dense = c_tilde.to_dense()
    n = c.dim

    width_stop = max(epsilon / c.scale, 8e-16)
    lo = _witness_floor(dense)
    diag.witness_floor = lo
    dual = _DualBound(dense)
    dual.tighten(target=lo, floor=lo, max_iters=160)
    hi = min(1.0, dual.best)
    diag.dual_bound = dual.best
    hi = max(hi, lo)

    probe_cap = math.ceil(math.log2(max(2.0 * c.scale / epsilon, 2.0))) + 1
    diag.probe_cap = probe_cap

    def probe_cfg(width: float) -> RefineConfig:
        zeta = min(width / 4.0, cfg.xi / 2.0)
        return RefineConfig(xi=cfg.xi, zeta=max(zeta, 1e-13), max_outer=cfg.max_outer)

    while hi - lo > width_stop and diag.probes < probe_cap:
        mid = 0.5 * (lo + hi)
        tightened = dual.tighten(target=mid, floor=diag.witness_floor)
        if tightened <= mid:
            hi = max(lo, min(hi, tightened))
            diag.dual_bound = tightened
            continue
        diag.probes += 1
        try:
            refine_solve(c, mid, probe_cfg(hi - lo), inner_budget_cap=_PROBE_ITERATION_CAP, **kw)
            lo = mid
        except InfeasibleError as exc:
            if exc.certificate == CERT_CAPPED:
                lo = mid  # undecided probe; the final uncapped solve re-certifies
            else:
                hi = mid

    final_cfg = RefineConfig(
        xi=cfg.xi, zeta=min((epsilon / c.scale) ** 4, cfg.xi / 2.0),
        max_outer=cfg.max_outer, epsilon_user=epsilon,
    )
    gamma_star = lo
    back = width_stop
    for _ in range(64):
        try:
            tuples, state = refine_solve(c, gamma_star, final_cfg, **kw)
            # the achieved objective certifies itself (tr >= gamma_tilde - zeta)
            # and is never below the solve target for an accepted run
            return max(gamma_star, state.gamma_tilde), tuples, state
        except InfeasibleError:
            # Probe acceptances are zeta_probe-relaxed and solve targets carry
            # the overshoot margin, so the certified-solvable gamma can sit
            # slightly below lo (even below the witness floor for instances
            # whose optimum equals the spectral bound); back off geometrically.
            diag.retreats += 1
            hi = min(hi, gamma_star)
            gamma_star = max(-1.0, gamma_star - back)
            back *= 2.0
    raise ConvergenceError("binary search could not certify a feasible gamma")


def round_to_feasible(state, zeta: float, c: CostMatrix) -> RoundedSolution:
    """Project a zeta-precise iterate onto the exactly feasible set.

    Rows whose diagonal deviates by more than sqrt(zeta)/n are zeroed, every
    diagonal is set to 1/n, and a sqrt(zeta)/n identity mixture restores
    positive semidefiniteness. The returned x_matrix = n rho_star has unit
    diagonal exactly.
    """
    rho = state.rho_tilde if isinstance(state, RefinementState) else np.asarray(state, dtype=float)
    n = rho.shape[0]
    if c.dim != n:
        raise ValueError("dimension mismatch")
    # Below float64 resolution of the dense iterate the literal threshold
    # would flag every row; the floor is inert for any zeta tested here.
    sqz = max(math.sqrt(zeta), 16.0 * n * np.finfo(float).eps)
    deviation = np.abs(n * np.diag(rho) - 1.0)
    bad = deviation > sqz
    bad_count = int(bad.sum())
    if bad_count > n * math.sqrt(zeta):
        raise ValueError(f"input is not zeta-precise: {bad_count} rows deviate beyond sqrt(zeta)")
    w = rho.copy()
    w[bad, :] = 0.0
    w[:, bad] = 0.0
    idx = np.arange(n)
    w[idx, idx] = 1.0 / n
    x = (n * w + sqz * np.eye(n)) / (1.0 + sqz)
    x[idx, idx] = 1.0
    x = symmetrize(x)
    objective = sparse_trace_product(c.raw, x)
    return RoundedSolution(rho_star=x / n, x_matrix=x, objective=objective, bad_set_size=bad_count)


def hyperplane_round(
    x_matrix: np.ndarray,
    c: CostMatrix,
    trials: int = 100,
    seed: int = 0,
) -> tuple[np.ndarray, float]:
    """Random-hyperplane rounding of a PSD unit-diagonal matrix.

    Factor x = F F^T by eigendecomposition, draw Gaussians per trial with a
    per-trial generator seed (seed + trial), and keep the best sign vector.
    """
    x_matrix = np.asarray(x_matrix, dtype=float)
    n = x_matrix.shape[0]
    if c.dim != n:
        raise ValueError("dimension mismatch")
    w, v = np.linalg.eigh(symmetrize(x_matrix))
    if w[0] < -1e-9 * max(1.0, float(w[-1])):
        raise ValueError("x_matrix is not positive semidefinite")
    factor = v * np.sqrt(np.clip(w, 0.0, None))
    best_x = None
    best_val = -math.inf
    for trial in range(trials):
        g = np.random.default_rng(seed + trial).standard_normal(n)
        signs = np.where(factor @ g >= 0.0, 1.0, -1.0)
        val = quadratic_form(c.raw, signs)
        if val > best_val:
            best_val = val
            best_x = signs
    return best_x, best_val
