"""Mirror-descent feasibility solver over Gibbs states.

A candidate state rho = exp(-H)/tr(exp(-H)) is tested against two separation
oracles (objective half-space first, then diagonal marginals); the first
violated oracle contributes a penalty direction P and the Hamiltonian moves
by (precision/16) P. Acceptance uses closed inequalities at 3/4 of the
precision, so accepted states re-verify at the full precision with margin.

The iterate depends on the trajectory only through integer update counts
(objective steps, per-coordinate diagonal steps), so the driver can fast
forward runs and cycles of repeating updates and still produce bitwise the
same Hamiltonians as the literal loop (``accelerate=False``). Near the
diagonal targets the update signatures become periodic (coordinates at their
targets flip sign every step while the rest keep pushing); the cycle engine
detects periods up to length 32, probes forward in whole cycles with
doubling plus bisection, and verifies every phase of a probed cycle before
advancing, falling back to literal stepping at the first mismatch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    DEFAULT_EXACT_CROSSOVER,
    GibbsState,
    SparseSymmetric,
    gibbs,
    hadamard_apply,
    sparse_trace_product,
)

OBJECTIVE = "objective"
DIAGONAL = "diagonal"

ACCEPTED = "accepted"
INFEASIBLE = "infeasible"

CERT_BUDGET = "iteration budget exhausted"
CERT_SPECTRAL = "objective unattainable (spectral bound)"
CERT_CAPPED = "iteration cap reached (uncertified)"

_MAX_CYCLE = 128


@dataclass(frozen=True)
class FeasibilityInstance:
    """One feasibility problem: find rho with tr((Q o C)rho) >= gamma_target
    and diagonal close to target_diag, both to within `precision`."""

    c_tilde: SparseSymmetric
    q_diag: np.ndarray
    target_diag: np.ndarray
    gamma_target: float
    precision: float

    def __post_init__(self):
        n = self.c_tilde.dim
        if n < 2:
            raise ValueError("instance dimension must be at least 2")
        q = np.asarray(self.q_diag, dtype=np.float64)
        t = np.asarray(self.target_diag, dtype=np.float64)
        if q.shape != (n,) or t.shape != (n,):
            raise ValueError("q_diag and target_diag must have the instance dimension")
        if not np.all(np.isin(q, (-1.0, 0.0, 1.0))):
            raise ValueError("q_diag entries must be in {-1, 0, 1}")
        if np.any(t < 0) or t.sum() > 1.0 + 1e-12:
            raise ValueError("target_diag must be nonnegative with sum at most 1")
        if abs(self.gamma_target) > 1.0 + 1e-12:
            raise ValueError("gamma_target must lie in [-1, 1]")
        if not (0.0 < self.precision < 1.0):
            raise ValueError("precision must lie in (0, 1)")
        object.__setattr__(self, "q_diag", q)
        object.__setattr__(self, "target_diag", t)

    @property
    def dim(self) -> int:
        return self.c_tilde.dim

    @property
    def step(self) -> float:
        return self.precision / 16.0

    def budget(self) -> int:
        """T = ceil(64 log2(n) / precision^2) + 1."""
        return math.ceil(64.0 * math.log2(self.dim) / self.precision**2) + 1

    def mask_dense(self) -> np.ndarray:
        """Dense Q o C_tilde (off-diagonal entries of the mask are all ones)."""
        return hadamard_apply(self.q_diag, self.c_tilde.to_dense())

    def mask_fro(self) -> float:
        sq = self.c_tilde.vals**2
        off = self.c_tilde.rows != self.c_tilde.cols
        dg = ~off
        qd = self.q_diag[self.c_tilde.rows[dg]]
        return math.sqrt(float(2.0 * sq[off].sum() + (qd**2 * sq[dg]).sum()))


@dataclass(frozen=True)
class TrajectorySegment:
    """A run of `steps` updates from one oracle with one direction.

    Cycle fast-forwarding appends one segment per cycle phase with the phase's
    aggregate count; the Hamiltonian depends on the counts only, so aggregated
    segments still reconstruct it exactly.
    """

    oracle: str
    steps: int
    d_diag: np.ndarray | None = None  # sign direction, diagonal segments only


@dataclass
class HamiltonianDescription:
    """Compressed description H = y[0] (Q o C) + y[1] diag(d_combined).

    `d_combined` is the accumulated diagonal direction rescaled to max-norm 1
    (a sum of sign vectors, so generally not a sign vector itself); `d_diag`
    is the most recent sign direction. The trajectory reconstructs H exactly.
    """

    y: np.ndarray
    d_diag: np.ndarray
    d_combined: np.ndarray
    trajectory: list[TrajectorySegment] = field(default_factory=list)

    def norm_bound(self, mask_fro: float = 1.0) -> float:
        return abs(float(self.y[0])) * mask_fro + abs(float(self.y[1]))

    def matrix(self, mask_dense: np.ndarray) -> np.ndarray:
        h = float(self.y[0]) * mask_dense
        idx = np.arange(mask_dense.shape[0])
        h[idx, idx] += float(self.y[1]) * self.d_combined
        return h


@dataclass
class FeasibilityOutcome:
    status: str
    hamiltonian: HamiltonianDescription
    iterations_used: int
    budget: int
    state: GibbsState | None = None
    diag_estimate: np.ndarray | None = None
    objective_estimate: float | None = None
    certificate: str | None = None

    @property
    def accepted(self) -> bool:
        return self.status == ACCEPTED


def oracle_objective(inst: FeasibilityInstance, rho) -> np.ndarray | None:
    """None accepts rho; otherwise the separating direction P = -(Q o C)."""
    mat = rho.matrix if isinstance(rho, GibbsState) else np.asarray(rho)
    c = sparse_trace_product(inst.c_tilde, mat, q_diag=inst.q_diag)
    if c >= inst.gamma_target - 0.75 * inst.precision:
        return None
    return -inst.mask_dense()


def oracle_diagonal(inst: FeasibilityInstance, rho) -> np.ndarray | None:
    """None accepts rho; otherwise the sign direction on the diagonal."""
    mat = rho.matrix if isinstance(rho, GibbsState) else np.asarray(rho)
    p = np.diag(mat)
    if float(np.abs(p - inst.target_diag).sum()) <= 0.75 * inst.precision:
        return None
    return np.sign(p - inst.target_diag)


class _Eval:
    __slots__ = ("rho", "c", "p", "dev", "pattern", "sig")

    def __init__(self, rho, c, p, dev, pattern, sig):
        self.rho = rho
        self.c = c
        self.p = p
        self.dev = dev
        self.pattern = pattern
        self.sig = sig


class _Driver:
    """Evaluates iterates as pure functions of the integer update counts."""

    def __init__(self, inst: FeasibilityInstance, gibbs_target: float, exact_crossover: int):
        self.inst = inst
        self.n = inst.dim
        self.step = inst.step
        self.mask = inst.mask_dense()
        self.mask_fro = inst.mask_fro()
        self.thresh_c = inst.gamma_target - 0.75 * inst.precision
        self.thresh_d = 0.75 * inst.precision
        self.target = inst.target_diag
        self.gibbs_target = gibbs_target
        self.exact = self.n <= exact_crossover
        self.exact_crossover = exact_crossover
        self.idx = np.arange(self.n)
        self.y1_count = 0
        self.diag_counts = np.zeros(self.n, dtype=np.int64)
        self._h = np.empty((self.n, self.n))
        self._dir_cache: dict[bytes, tuple[int, np.ndarray | None]] = {}

    def direction(self, sig: bytes) -> tuple[int, np.ndarray | None]:
        got = self._dir_cache.get(sig)
        if got is None:
            got = _sig_direction(sig, self.n)
            self._dir_cache[sig] = got
        return got

    def y_vector(self) -> np.ndarray:
        y1 = -self.step * float(self.y1_count)
        y2 = self.step * float(np.abs(self.diag_counts).max()) if self.n else 0.0
        return np.array([y1, y2])

    def d_combined(self) -> np.ndarray:
        peak = np.abs(self.diag_counts).max()
        if peak == 0:
            return np.zeros(self.n)
        return self.diag_counts / float(peak)

    def _classify(self, rho: np.ndarray) -> _Eval:
        c = float(np.einsum("ij,ij->", self.mask, rho))
        p = np.ascontiguousarray(np.diag(rho))
        resid = p - self.target
        dev = float(np.abs(resid).sum())
        pattern = np.sign(resid)
        if c < self.thresh_c:
            sig = b"O"
        elif dev > self.thresh_d:
            sig = b"D" + pattern.astype(np.int8).tobytes()
        else:
            sig = b"A"
        return _Eval(rho, c, p, dev, pattern, sig)

    def evaluate(self, extra_obj: int = 0, extra_diag: np.ndarray | None = None) -> _Eval:
        """State and oracle quantities after hypothetical extra updates."""
        if self.exact:
            diag = self.diag_counts if extra_diag is None else self.diag_counts + extra_diag
            y1s = np.array([-self.step * float(self.y1_count + extra_obj)])
            return self._evaluate_stack(y1s, (self.step * diag)[None, :])[0]
        y1 = -self.step * float(self.y1_count + extra_obj)
        diag = self.diag_counts if extra_diag is None else self.diag_counts + extra_diag
        h = self._h
        np.multiply(self.mask, y1, out=h)
        h[self.idx, self.idx] += self.step * diag
        bound = abs(y1) * self.mask_fro + self.step * float(np.abs(diag).max())
        rho = gibbs(h, bound, self.gibbs_target, self.exact_crossover).matrix
        return self._classify(rho)

    def _evaluate_stack(self, y1s: np.ndarray, diag_f: np.ndarray) -> list[_Eval]:
        """Batched evaluation; the single-state path routes through here too,
        so batched and literal executions share every reduction bitwise."""
        count = y1s.size
        hstack = y1s[:, None, None] * self.mask[None, :, :]
        hstack[:, self.idx, self.idx] += diag_f
        w, v = np.linalg.eigh(hstack)
        e = np.exp(w[:, :1] - w)
        rho_all = (v * e[:, None, :]) @ v.transpose(0, 2, 1)
        rho_all *= (1.0 / e.sum(axis=1))[:, None, None]
        c_all = np.einsum("bij,ij->b", rho_all, self.mask)
        p_all = np.diagonal(rho_all, axis1=1, axis2=2)
        resid = p_all - self.target[None, :]
        dev_all = np.abs(resid).sum(axis=1)
        pattern_all = np.sign(resid)
        out = []
        for b in range(count):
            c = float(c_all[b])
            dev = float(dev_all[b])
            if c < self.thresh_c:
                sig = b"O"
            elif dev > self.thresh_d:
                sig = b"D" + pattern_all[b].astype(np.int8).tobytes()
            else:
                sig = b"A"
            out.append(_Eval(rho_all[b], c, p_all[b], dev, pattern_all[b], sig))
        return out

    def evaluate_path(self, sigs: list[bytes]) -> list[_Eval]:
        """Evaluations along a predicted update path, one batched eigh call.

        Entry b is the state after applying sigs[0..b-1] (entry 0 is the
        current state); callers must discard entries past the first position
        whose actual update differs from the prediction.
        """
        count = len(sigs)
        y1s = np.empty(count)
        diag_f = np.empty((count, self.n))
        acc_o = self.y1_count
        acc_d = self.diag_counts
        for b in range(count):
            if b > 0:
                o, d = self.direction(sigs[b - 1])
                acc_o = acc_o + o
                if d is not None:
                    acc_d = acc_d + d
            y1s[b] = -self.step * float(acc_o)
            diag_f[b] = self.step * acc_d
        return self._evaluate_stack(y1s, diag_f)

    def evaluate_offsets(self, offsets: list[tuple[int, np.ndarray]]) -> list[_Eval]:
        """Batched evaluations at explicit (extra_obj, extra_diag) offsets."""
        count = len(offsets)
        y1s = np.empty(count)
        diag_f = np.empty((count, self.n))
        for b, (o, d) in enumerate(offsets):
            y1s[b] = -self.step * float(self.y1_count + o)
            diag_f[b] = self.step * (self.diag_counts + d)
        return self._evaluate_stack(y1s, diag_f)


def _first_true(predicate, cap: int, stride_cap: int | None):
    """Smallest j in [1, cap] with predicate(j), assuming predicate(0) is False.

    Doubling (optionally stride-capped) then bisection; None when no probe in
    range fires.
    """
    if cap < 1:
        return None
    lo = 0
    stride = 1
    while True:
        hi = min(lo + stride, cap)
        if predicate(hi):
            break
        lo = hi
        if lo >= cap:
            return None
        if stride_cap is None or stride < stride_cap:
            stride *= 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if predicate(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _sig_direction(sig: bytes, n: int) -> tuple[int, np.ndarray | None]:
    if sig == b"O":
        return 1, None
    return 0, np.frombuffer(sig[1:], dtype=np.int8).astype(np.int64)


def solve_feasibility(
    inst: FeasibilityInstance,
    *,
    accelerate: bool = True,
    gibbs_target: float | None = None,
    exact_crossover: int = DEFAULT_EXACT_CROSSOVER,
    spectral_shortcut: bool = True,
    budget_cap: int | None = None,
) -> FeasibilityOutcome:
    """Run the update loop until both oracles accept or the budget is exhausted.

    The Taylor error budget defaults to precision/4, so accepted states meet
    the full-precision closeness guarantees. `accelerate` enables cycle fast
    forwarding (same trajectory, far fewer Gibbs evaluations). A `budget_cap`
    below the theoretical budget T makes an exhausted run come back with the
    uncertified CERT_CAPPED certificate instead of CERT_BUDGET; callers that
    need sound infeasibility must leave it unset.
    """
    if gibbs_target is None:
        gibbs_target = inst.precision / 4.0
    true_budget = inst.budget()
    budget = true_budget if budget_cap is None else min(true_budget, budget_cap)
    drv = _Driver(inst, gibbs_target, exact_crossover)
    n = drv.n
    step_scale = drv.step

    # run-length encoded trajectory over raw signatures; materialized into
    # TrajectorySegments only on exit
    rle: list[list] = []
    direction = drv.direction

    def describe() -> HamiltonianDescription:
        trajectory = []
        last_d = np.zeros(n)
        for sig, times in rle:
            obj, d = direction(sig)
            if obj:
                trajectory.append(TrajectorySegment(OBJECTIVE, times))
            else:
                dd = d.astype(np.float64)
                trajectory.append(TrajectorySegment(DIAGONAL, times, dd))
                last_d = dd
        return HamiltonianDescription(
            y=drv.y_vector(), d_diag=last_d.copy(), d_combined=drv.d_combined(),
            trajectory=trajectory,
        )

    if spectral_shortcut:
        lam_max = float(np.linalg.eigvalsh(drv.mask)[-1])
        if lam_max < drv.thresh_c - 1e-9:
            return FeasibilityOutcome(
                status=INFEASIBLE, hamiltonian=describe(), iterations_used=0,
                budget=true_budget, certificate=CERT_SPECTRAL,
            )

    def apply(sig: bytes, times: int = 1):
        obj, d = direction(sig)
        if obj:
            drv.y1_count += times
        else:
            drv.diag_counts += times * d
        if rle and rle[-1][0] == sig:
            rle[-1][1] += times
        else:
            rle.append([sig, times])

    history: list[bytes] = []
    successor: dict[bytes, bytes] = {}
    last_pos: dict[bytes, int] = {}
    pos = 0
    cooldown = 0
    engage_fails = 0
    t = 0
    pending: _Eval | None = None
    # speculative batch: evaluations along a predicted signature path
    spec: list[_Eval] = []
    spec_sigs: list[bytes] = []
    spec_pos = 0
    spec_ema = 16.0  # running estimate of entries consumed per batch

    while t < budget:
        t += 1
        if pending is not None:
            ev = pending
            pending = None
        elif spec_pos < len(spec):
            ev = spec[spec_pos]
            if ev.sig != spec_sigs[spec_pos]:
                # mispredicted path: this evaluation is still the current
                # state's, but the rest of the batch is off-trajectory
                spec_ema = 0.75 * spec_ema + 0.25 * max(spec_pos, 1)
                spec = []
                spec_sigs = []
                spec_pos = 0
            else:
                spec_pos += 1
        else:
            ev = drv.evaluate()

        if ev.sig == b"A":
            return FeasibilityOutcome(
                status=ACCEPTED, hamiltonian=describe(), iterations_used=t,
                budget=true_budget,
                state=GibbsState(ev.rho, 0.0 if drv.exact else gibbs_target),
                diag_estimate=ev.p, objective_estimate=ev.c,
            )

        # literal update for this iteration
        apply(ev.sig)
        if history:
            successor[history[-1]] = ev.sig
        history.append(ev.sig)
        if not accelerate:
            continue
        if len(history) > 4 * _MAX_CYCLE:
            del history[: -2 * _MAX_CYCLE]

        # detect a signature period ending here: the only viable period is the
        # distance to the previous occurrence of the current signature, so one
        # dictionary lookup plus one block compare per step suffices. Short
        # periods must have repeated enough that probing beats batched
        # literal stepping.
        pos += 1
        period = 0
        if cooldown > 0:
            cooldown -= 1
            last_pos[ev.sig] = pos
        else:
            prev = last_pos.get(ev.sig)
            last_pos[ev.sig] = pos
            if prev is not None:
                length = pos - prev
                if 0 < length <= _MAX_CYCLE:
                    repeats = max(2, -(-12 // length))  # ceil(12/length)
                    if len(history) >= repeats * length:
                        block = history[-length:]
                        if all(
                            history[-(k + 1) * length: -k * length] == block
                            for k in range(1, repeats)
                        ):
                            period = length
        if not period:
            # keep the speculative batch warm: predict the next updates by
            # tiling the recent signature tail
            if drv.exact and pending is None and spec_pos >= len(spec):
                if spec_sigs:
                    spec_ema = 0.75 * spec_ema + 0.25 * len(spec_sigs)
                # chain the last-seen successor of each signature
                width = int(min(96, max(6, 1.5 * spec_ema)))
                cur = history[-1]
                spec_sigs = []
                for _ in range(width):
                    cur = successor.get(cur, cur)
                    spec_sigs.append(cur)
                spec = drv.evaluate_path(spec_sigs)
                spec_pos = 0
            continue
        cycle = history[-period:]
        d_obj = 0
        d_diag = np.zeros(n, dtype=np.int64)
        prefixes = []
        for s in cycle:
            prefixes.append((d_obj, d_diag.copy()))
            o, d = direction(s)
            d_obj += o
            if d is not None:
                d_diag = d_diag + d

        # replay(j): phases matched when the cycle restarts after j whole
        # advanced cycles, plus the phase evaluations themselves.
        memo: dict[int, tuple[int, list[_Eval]]] = {}

        def replay(j: int) -> tuple[int, list[_Eval]]:
            if j not in memo:
                if drv.exact and period > 1:
                    evs = drv.evaluate_offsets(
                        [(j * d_obj + po, j * d_diag + pd) for po, pd in prefixes]
                    )
                    matched = 0
                    for e, s in zip(evs, cycle):
                        if e.sig != s:
                            break
                        matched += 1
                    evs = evs[: matched + 1]
                else:
                    evs = []
                    matched = 0
                    for m, s in enumerate(cycle):
                        po, pd = prefixes[m]
                        e = drv.evaluate(extra_obj=j * d_obj + po, extra_diag=j * d_diag + pd)
                        evs.append(e)
                        if e.sig != s:
                            break
                        matched += 1
                memo[j] = (matched, evs)
            return memo[j]

        def advance(cycles: int, phases: int):
            nonlocal t, spec, spec_sigs, spec_pos
            if cycles:
                drv.y1_count += cycles * d_obj
                drv.diag_counts += cycles * d_diag
                for s in cycle:
                    if rle and rle[-1][0] == s:
                        rle[-1][1] += cycles
                    else:
                        rle.append([s, cycles])
            for m in range(phases):
                apply(cycle[m])
            t += cycles * period + phases
            history.clear()
            last_pos.clear()
            spec = []
            spec_sigs = []
            spec_pos = 0

        matched0, evs0 = replay(0)
        if matched0 < period:
            # the hypothesised third repetition never starts; take what was
            # verified and back off probing (quasi-periodic phases churn)
            engage_fails += 1
            cooldown = min(4 * period * 2**min(engage_fails, 6), 8192)
            phases = min(matched0, budget - t)
            if phases == 0:
                continue
            advance(0, phases)
            if t < budget:
                pending = evs0[phases]
            continue

        cap = (budget - t) // period
        if cap < 1:
            continue
        # pure-objective cycles are provably monotone in the probe index, so
        # the doubling may run unbounded; mixed cycles keep a stride cap
        stride_cap = None if d_obj == period else 4096
        j_break = _first_true(lambda j: replay(j)[0] < period, cap, stride_cap=stride_cap)
        if j_break is None:
            advance(cap, 0)
            continue
        matched, evs = memo[j_break]
        phases = min(matched, budget - t - j_break * period)
        advance(j_break, max(0, phases))
        if t < budget and phases < len(evs):
            pending = evs[phases]
        engage_fails = 0 if j_break > 1 else engage_fails
        cooldown = 0 if j_break > 1 else min(4 * period, 1024)

    return FeasibilityOutcome(
        status=INFEASIBLE, hamiltonian=describe(), iterations_used=budget,
        budget=true_budget, certificate=CERT_BUDGET if budget == true_budget else CERT_CAPPED,
    )
