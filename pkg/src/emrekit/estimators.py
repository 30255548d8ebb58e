"""PEC, EMRE and hybrid estimators, shot planners, post-processing and gate selection."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .channels import CircuitIR
from .errors import InfeasibleBias, InvalidParameter
from .plans import (APPROXIMATE, FULL, UNMITIGATED, DecompositionCache, GatePlan, MitigationPlan,
                    build_plan, plan_emre, plan_none, plan_pec)
from .robustness import POSITIVE_PART
from .simulator import SINGLE_SHOT, CompiledSampler, run_shots

log = logging.getLogger(__name__)

TRIVIAL = "Trivial"
UPPER = "NonTrivialUpper"
LOWER = "NonTrivialLower"
SMALL_S = "SmallS"

__all__ = [
    "GatePlan", "MitigationPlan", "plan_emre", "plan_none", "plan_pec", "plan_hemre",
    "EstimateReport", "PostProcessResult", "plan_shots_pec", "plan_shots_emre", "plan_shots_hemre",
    "c_from_shots", "emre_postprocess", "noem_estimate", "pec_estimate", "emre_estimate",
    "hemre_estimate", "hemre_select_greedy", "hemre_select_window", "GreedySelection", "WindowSelection",
]


@dataclass
class EstimateReport:
    method: str
    E: float
    b: float
    E_B: float
    E_hat: float
    epsilon: float
    shots: int
    branch: str | None
    c: float
    p_fail: float
    seed: int
    s: float = 1.0
    s_incl: float = 1.0
    gamma_incl: float = 1.0
    stderr: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


class PostProcessResult(NamedTuple):
    E: float
    b: float
    branch: str


# ---------------------------------------------------------------- shot planning

def _check_p_fail(p_fail):
    if not 0 < p_fail < 1:
        raise InvalidParameter(f"p_fail must lie in (0, 1), got {p_fail}")


def _ceil(x: float) -> int:
    # guard against values like 738.0000000000001 produced by rounding
    r = round(x)
    return int(r) if abs(x - r) <= 1e-9 * max(1.0, abs(x)) else math.ceil(x)


def plan_shots_pec(gamma: float, precision: float, p_fail: float) -> int:
    """Hoeffding shot count for an estimator with range ``[-gamma, gamma]``."""
    _check_p_fail(p_fail)
    if precision <= 0 or gamma < 1:
        raise InvalidParameter("need precision > 0 and gamma >= 1")
    return _ceil(2 * gamma**2 / precision**2 * math.log(2 / p_fail))


def plan_shots_emre(c: float, p_fail: float) -> int:
    _check_p_fail(p_fail)
    if c <= 0:
        raise InvalidParameter("c must be positive")
    return _ceil(2 / c**2 * math.log(2 / p_fail))


def plan_shots_hemre(s_incl: float, gamma_incl: float, c: float, s_total: float, p_fail: float) -> int:
    _check_p_fail(p_fail)
    if c <= 0 or s_incl < 1 or gamma_incl < 1 or s_total < 1:
        raise InvalidParameter("need c > 0 and s_incl, gamma_incl, s_total >= 1")
    return _ceil(2 * s_incl**2 * gamma_incl**2 / (c * s_total) ** 2 * math.log(2 / p_fail))


def c_from_shots(shots: int, p_fail: float) -> float:
    """Precision constant reached by a fixed shot budget (inverse of :func:`plan_shots_emre`)."""
    _check_p_fail(p_fail)
    if shots < 1:
        raise InvalidParameter("shots must be >= 1")
    return math.sqrt(2 * math.log(2 / p_fail) / shots)


def hoeffding_halfwidth(gamma: float, shots: int, p_fail: float) -> float:
    return 2 * gamma * math.sqrt(math.log(2 / p_fail) / (2 * shots))


# ---------------------------------------------------------------- post-processing

def emre_postprocess(E_B: float, epsilon: float, s: float, o_max: float = 1.0) -> PostProcessResult:
    """Turn the rescaled mean into an estimate ``E`` and guaranteed bias ``b``.

    ``E_B`` lies within ``w = epsilon + (s - 1) o_max`` of the ideal value, which
    itself lies in ``[-o_max, o_max]``. The answer is the midpoint and half-width
    of the intersection of the two intervals. For ``o_max = 1`` the branches reduce
    to the usual case analysis on ``epsilon + s`` versus 2.
    """
    if s < 1 - 1e-12:
        raise InvalidParameter(f"s must be >= 1, got {s}")
    if epsilon < 0:
        raise InvalidParameter(f"epsilon must be >= 0, got {epsilon}")
    if o_max <= 0:
        raise InvalidParameter("o_max must be positive")
    o = o_max
    w = epsilon + (s - 1) * o
    if not np.isfinite(E_B):
        raise InvalidParameter("E_B must be finite")
    E_B = min(max(E_B, -(o + w)), o + w)
    if w >= o:
        if abs(E_B) <= w - o:
            return PostProcessResult(0.0, o, TRIVIAL)
    elif abs(E_B) <= o - w:
        return PostProcessResult(E_B, _cover(E_B, E_B - w, E_B + w), SMALL_S)
    if E_B > 0:
        lo, hi, branch = E_B - w, o, UPPER
    else:
        lo, hi, branch = -o, E_B + w, LOWER
    # rounding at the clamp edge can leave |e| a hair above o
    e = min(max((lo + hi) / 2, -o), o)
    return PostProcessResult(e, _cover(e, lo, hi), branch)


def _cover(e: float, lo: float, hi: float) -> float:
    """Half-width around ``e`` reaching both ends of ``[lo, hi]``, rounded outward by one ulp."""
    return float(np.nextafter(max(hi - e, e - lo, 0.0), np.inf))


# ---------------------------------------------------------------- estimators

def _sample(circuit, plan, shots, seed, shot_mode, threads, sampler=None):
    sampler = sampler or CompiledSampler(circuit, plan)
    return run_shots(circuit, plan, shots, seed, mode=shot_mode, threads=threads, sampler=sampler)


def noem_estimate(circuit: CircuitIR, shots: int, seed: int = 0, p_fail: float = 0.05,
                  shot_mode: str = SINGLE_SHOT, threads: int = 1,
                  plan: MitigationPlan | None = None, sampler: CompiledSampler | None = None) -> EstimateReport:
    """Plain average of the noisy circuit."""
    plan = plan or plan_none(circuit)
    batch = _sample(circuit, plan, shots, seed, shot_mode, threads, sampler)
    m = batch.mean
    return EstimateReport("none", m, hoeffding_halfwidth(1.0, shots, p_fail), m, m, 0.0, shots, None,
                          c_from_shots(shots, p_fail), p_fail, seed, stderr=batch.stderr)


def pec_estimate(circuit: CircuitIR, shots: int | None = None, seed: int = 0, p_fail: float = 0.05,
                 precision: float | None = None, shot_mode: str = SINGLE_SHOT, threads: int = 1,
                 plan: MitigationPlan | None = None,
                 sampler: CompiledSampler | None = None) -> EstimateReport:
    """Unbiased quasi-probability estimate; ``b`` is the Hoeffding half-width at ``p_fail``."""
    plan = plan or plan_pec(circuit)
    gamma = plan.gamma_incl
    if shots is None:
        if precision is None:
            raise InvalidParameter("give either shots or precision")
        shots = plan_shots_pec(gamma, precision, p_fail)
    batch = _sample(circuit, plan, shots, seed, shot_mode, threads, sampler)
    e_b = batch.mean
    o = 1.0
    return EstimateReport("pec", float(np.clip(e_b, -o, o)), hoeffding_halfwidth(gamma, shots, p_fail), e_b,
                          e_b / gamma, 0.0, shots, None, c_from_shots(shots, p_fail), p_fail, seed,
                          s=plan.s_total, gamma_incl=gamma, stderr=batch.stderr,
                          diagnostics={"gamma": gamma})


def emre_estimate(circuit: CircuitIR, c: float | None = None, p_fail: float = 0.05,
                  mode: str = POSITIVE_PART, seed: int = 0, shots: int | None = None,
                  shot_mode: str = SINGLE_SHOT, threads: int = 1,
                  plan: MitigationPlan | None = None,
                  sampler: CompiledSampler | None = None) -> EstimateReport:
    """Sample the rescaled implementable circuit ``s B`` and post-process."""
    plan = plan or plan_emre(circuit, mode)
    c, shots = _resolve_budget(c, shots, p_fail)
    s = plan.s_total
    batch = _sample(circuit, plan, shots, seed, shot_mode, threads, sampler)
    e_hat = batch.mean
    e_b = s * e_hat
    eps = c * s
    r = emre_postprocess(e_b, eps, s)
    return EstimateReport("emre", r.E, r.b, e_b, e_hat, eps, shots, r.branch, c, p_fail, seed,
                          s=s, s_incl=plan.s_incl, gamma_incl=1.0, stderr=batch.stderr,
                          diagnostics={"emre_mode": plan.emre_mode})


def _resolve_budget(c, shots, p_fail):
    if shots is None:
        if c is None:
            raise InvalidParameter("give either c or shots")
        return c, plan_shots_emre(c, p_fail)
    if c is None:
        c = c_from_shots(shots, p_fail)
    return c, shots


def hemre_estimate(circuit: CircuitIR, plan: MitigationPlan, c: float | None = None, p_fail: float = 0.05,
                   seed: int = 0, shots: int | None = None, shot_mode: str = SINGLE_SHOT,
                   epsilon_base: str = "s_total", threads: int = 1,
                   sampler: CompiledSampler | None = None) -> EstimateReport:
    """Hybrid estimate: PEC-expanded gates carry sign and weight, approximated gates are rescaled by ``s_incl``."""
    s_incl, g_incl, s_total = plan.s_incl, plan.gamma_incl, plan.s_total
    if shots is None:
        if c is None:
            raise InvalidParameter("give either c or shots")
        shots = plan_shots_hemre(s_incl, g_incl, c, s_total, p_fail)
    elif c is None:
        c = c_from_shots(shots, p_fail) * (s_incl * g_incl / s_total)
    if epsilon_base not in ("s_total", "s_incl"):
        raise InvalidParameter(f"unknown epsilon base {epsilon_base!r}")
    batch = _sample(circuit, plan, shots, seed, shot_mode, threads, sampler)
    e_hat = batch.mean
    e_b = s_incl * e_hat
    eps = c * (s_total if epsilon_base == "s_total" else s_incl)
    r = emre_postprocess(e_b, eps, s_incl)
    return EstimateReport("hemre", r.E, r.b, e_b, e_hat, eps, shots, r.branch, c, p_fail, seed,
                          s=s_total, s_incl=s_incl, gamma_incl=g_incl, stderr=batch.stderr,
                          diagnostics={"approximated": plan.count(APPROXIMATE),
                                       "expanded": plan.count(FULL), "infeasible": plan.infeasible})


# ---------------------------------------------------------------- gate selection

@dataclass
class GreedySelection:
    counts: dict[str, int]
    s_incl: float
    bound: float


@dataclass
class WindowSelection:
    """Approximated gates are ``order[start:stop]`` (indices into the caller's list)."""

    start: int
    stop: int
    order: list[int]
    s_incl: float
    tot_overhead: float
    bound: float

    @property
    def selected(self) -> list[int]:
        return sorted(self.order[self.start:self.stop])


def _bias_budget(delta_fixed, epsilon):
    if delta_fixed < 0 or epsilon < 0:
        raise InvalidParameter("delta_fixed and epsilon must be non-negative")
    return delta_fixed - epsilon + 1


def hemre_select_greedy(gate_table, delta_fixed: float, epsilon: float) -> GreedySelection:
    """Approximate whole gate classes, cheapest ``s`` first, until the bias budget is spent.

    ``gate_table`` rows are ``(gate_class, frequency, s_i)``.
    """
    bound = _bias_budget(delta_fixed, epsilon)
    if bound < 1:
        raise InfeasibleBias(f"bias budget {bound:.6g} < 1 admits no approximation",
                             GreedySelection({}, 1.0, bound))
    rows = sorted(gate_table, key=lambda r: (r[2], r[0]))
    counts: dict[str, int] = {}
    s_incl = 1.0
    tol = 1 + 1e-12
    for name, freq, s in rows:
        if s <= 1.0:
            counts[name] = int(freq)
    for name, freq, s in rows:
        if s <= 1.0:
            continue
        if s_incl * s**freq <= bound * tol:
            counts[name] = int(freq)
            s_incl *= s**freq
            continue
        m = int(math.floor(math.log(bound / s_incl) / math.log(s) + 1e-12))
        m = max(0, min(m, int(freq)))
        if m:
            counts[name] = m
            s_incl *= s**m
        break
    return GreedySelection(counts, s_incl, bound)


def hemre_select_window(gates, delta_fixed: float, epsilon: float) -> WindowSelection:
    """Best contiguous run, in descending-``s`` order, of gates to approximate.

    ``gates`` rows are ``(s_i, gamma_i)``. For every start index the window grows
    while the product of ``s`` stays within the budget; the cost of a window is
    ``s_incl * prod(gamma outside the window)``.
    """
    bound = _bias_budget(delta_fixed, epsilon)
    order = sorted(range(len(gates)), key=lambda i: -gates[i][0])
    s = [float(gates[i][0]) for i in order]
    g = [float(gates[i][1]) for i in order]
    n = len(s)
    g_all = float(np.prod(g)) if n else 1.0
    if bound < 1:
        raise InfeasibleBias(f"bias budget {bound:.6g} < 1 admits no approximation",
                             WindowSelection(0, 0, order, 1.0, g_all, bound))
    best = WindowSelection(0, 0, order, 1.0, g_all if n == 0 else math.inf, bound)
    tol = 1 + 1e-12
    for j in range(n):
        s_incl = 1.0
        i = j
        while i < n and s_incl * s[i] <= bound * tol:
            s_incl *= s[i]
            i += 1
        outside = float(np.prod(g[:j])) * float(np.prod(g[i:]))
        cost = s_incl * outside
        if cost < best.tot_overhead:
            best = WindowSelection(j, i, order, s_incl, cost, bound)
        if i == n:
            break
    return best


def plan_hemre(circuit: CircuitIR, delta_fixed: float, epsilon: float, selector: str = "greedy",
               emre_mode: str = POSITIVE_PART, strict: bool = False) -> MitigationPlan:
    """Full hybrid plan: selected gates approximated, other mitigated gates PEC-expanded.

    If the budget admits nothing the pure-PEC plan comes back with ``infeasible``
    set, unless ``strict`` asks for the :class:`InfeasibleBias` to propagate.
    """
    cache = DecompositionCache(circuit.noise, emre_mode)
    gates = circuit.gates
    mitigated = [i for i, gt in enumerate(gates) if circuit.noise.mitigates(gt)]
    kinds = [UNMITIGATED] * len(gates)
    for i in mitigated:
        kinds[i] = FULL
    infeasible = False
    try:
        if selector == "greedy":
            table: dict[str, list] = {}
            for i in mitigated:
                table.setdefault(gates[i].name, []).append(i)
            rows = [(name, len(idx), cache.emre(gates[idx[0]]).s) for name, idx in table.items()]
            sel = hemre_select_greedy(rows, delta_fixed, epsilon)
            for name, m in sel.counts.items():
                for i in table[name][:m]:
                    kinds[i] = APPROXIMATE
        elif selector == "window":
            rows = []
            for i in mitigated:
                gp = cache.gate_plan(gates[i], FULL)
                rows.append((gp.s, gp.gamma))
            sel = hemre_select_window(rows, delta_fixed, epsilon)
            for k in sel.selected:
                kinds[mitigated[k]] = APPROXIMATE
        else:
            raise InvalidParameter(f"unknown selector {selector!r}")
    except InfeasibleBias:
        if strict:
            raise
        log.warning("bias budget too small for any approximation; using pure PEC")
        infeasible = True
    plan = build_plan(circuit, kinds, emre_mode, cache)
    plan.infeasible = infeasible
    plan.meta = {"delta_fixed": delta_fixed, "epsilon": epsilon, "selector": selector}
    return plan
