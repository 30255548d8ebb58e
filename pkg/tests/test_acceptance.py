"""Acceptance criteria; each test prints one PASS/FAIL line via ``record_acceptance``."""
import dataclasses
import math
import os

import numpy as np
import pytest

from conftest import record_acceptance
from test_simulator import random_circuit

from emrekit.bench import bundled_config, load_config, run_sweep, summarize
from emrekit.channels import Gate, NoiseModel
from emrekit.estimators import (LOWER, SMALL_S, TRIVIAL, UPPER, c_from_shots, emre_estimate, emre_postprocess,
                                hemre_estimate, plan_hemre, plan_shots_emre, plan_shots_hemre, plan_shots_pec)
from emrekit.plans import APPROXIMATE, plan_emre, plan_pec
from emrekit.robustness import POSITIVE_PART, certify_r_plus, closed_form_r_plus
from emrekit.simulator import exact_expectation, signed_enumeration

THREADS = max(1, min(8, os.cpu_count() or 1))


def _summary_table(cfg, threads=THREADS):
    records, exact = run_sweep(cfg, threads=threads)
    rows = summarize(records, exact, cfg.noise)
    return {(r["noise_label"], r["method"]): r for r in rows}, [n.label for n in cfg.noise]


# ---------------------------------------------------------------- 1

def test_criterion_1_closed_form_certification():
    gate = Gate("H", (0,))
    worst = 0.0
    dephasing_values = []
    for p in (0.001, 0.01, 0.05, 0.1):
        for noise in (NoiseModel.depolarizing_ddim(p, d=2), NoiseModel.dephasing(p)):
            rep = certify_r_plus(gate, noise, n_samples=200, seed=1)
            ref = closed_form_r_plus(noise).r_plus
            worst = max(worst, abs(rep.lower - ref), abs(rep.upper - ref))
            if noise.kind == "dephasing":
                dephasing_values.append(f"{p}:{rep.lower:.10g}")
    ok = worst <= 1e-9
    record_acceptance(1, ok, f"max |bound - closed form| = {worst:.2e}; certified dephasing R+ "
                             + ", ".join(dephasing_values))
    assert ok


# ---------------------------------------------------------------- 2

def test_criterion_2_pec_signed_enumeration():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(3):
        c = random_circuit(rng, n=2, depth=int(rng.integers(1, 5)), noise=NoiseModel.dephasing(0.1))
        worst = max(worst, abs(signed_enumeration(c, plan_pec(c)) - exact_expectation(c, ideal=True)))
    ok = worst <= 1e-8
    record_acceptance(2, ok, f"max |enumeration - ideal| = {worst:.2e} over 3 circuits")
    assert ok


# ---------------------------------------------------------------- 3

def test_criterion_3_emre_guarantee():
    rng = np.random.default_rng(3)
    p_fail, shots = 0.01, 2000
    c = c_from_shots(shots, p_fail)
    covered, n = 0, 200
    for k in range(n):
        p = float(rng.uniform(0.0005, 0.01))
        circ = random_circuit(rng, n=3, depth=int(rng.integers(1, 11)), noise=NoiseModel.depolarizing(p))
        rep = emre_estimate(circ, c, p_fail, POSITIVE_PART, seed=1000 + k, shots=shots)
        covered += abs(rep.E - exact_expectation(circ, ideal=True)) <= rep.b
    ok = covered / n >= 0.99
    record_acceptance(3, ok, f"coverage {covered}/{n} = {covered / n:.3f} (need >= 0.99)")
    assert ok


# ---------------------------------------------------------------- 4 and 5

@pytest.fixture(scope="module")
def table2():
    return _summary_table(load_config(bundled_config("table2.toml")))


BANDS = {"none": (0.06, 0.11), "pec": (0.03, 0.10), "emre": (0.015, 0.06), "hemre(delta=0.05)": (0.02, 0.08)}


@pytest.mark.slow
def test_criterion_4_table2_bands(table2):
    table, labels = table2
    label = next(lb for lb in labels if "0.001" in lb and "0.0015" not in lb)
    parts, ok = [], True
    for method, (lo, hi) in BANDS.items():
        v = table[(label, method)]["mean_bias"]
        inside = lo <= v <= hi
        ok &= inside
        parts.append(f"{method} {v:.4f} in [{lo}, {hi}]" + ("" if inside else " MISS"))
    std_emre, std_pec = table[(label, "emre")]["std_E"], table[(label, "pec")]["std_E"]
    ok &= std_emre < std_pec
    parts.append(f"std emre {std_emre:.4f} < pec {std_pec:.4f}")
    record_acceptance(4, ok, "; ".join(parts))
    assert ok


# expected EMRE-versus-PEC ordering at each sweep point (True means EMRE has the smaller bias)
ORDERING = {0.0005: True, 0.001: True, 0.005: True, 0.01: False}


@pytest.mark.slow
def test_criterion_5_crossover(table2):
    table, labels = table2
    cfg = load_config(bundled_config("table2.toml"))
    hits, parts = 0, []
    for noise, label in zip(cfg.noise, labels):
        e, p = table[(label, "emre")]["mean_bias"], table[(label, "pec")]["mean_bias"]
        match = (e < p) == ORDERING[noise.p]
        hits += match
        parts.append(f"p={noise.p}: emre {e:.4f} {'<' if e < p else '>='} pec {p:.4f}{'' if match else ' (mismatch)'}")
    ok = hits >= 3
    record_acceptance(5, ok, f"{hits}/4 points match; " + "; ".join(parts))
    assert ok


# ---------------------------------------------------------------- 6

def test_criterion_6_hemre_reductions():
    from emrekit.channels import build_swap_test_circuit
    circ = build_swap_test_circuit(noise=NoiseModel.depolarizing(0.001))
    shots, p_fail, seed = 1000, 0.05, 77
    c0 = c_from_shots(shots, p_fail)
    s_total = plan_emre(circ).s_total
    eps = c0 * s_total
    plan = plan_hemre(circ, s_total - 1 + eps, eps)
    all_approx = all(k == APPROXIMATE for k in plan.kinds)
    h = hemre_estimate(circ, plan, p_fail=p_fail, seed=seed, shots=shots)
    e = emre_estimate(circ, p_fail=p_fail, seed=seed, shots=shots)
    fields = ("E", "b", "E_B", "E_hat", "epsilon", "shots", "branch", "c")
    same = all(getattr(h, f) == getattr(e, f) for f in fields)
    zero = plan_hemre(circ, 0.0, eps)
    pec_same = zero.kinds == plan_pec(circ).kinds
    ok = all_approx and same and pec_same
    record_acceptance(6, ok, f"large budget all-approximate={all_approx}, bit-identical to EMRE={same}; "
                             f"zero budget plan equals PEC plan={pec_same}")
    assert ok


# ---------------------------------------------------------------- 7

@pytest.mark.slow
def test_criterion_7_inhomogeneous_pauli():
    cfg = load_config(bundled_config("inhomogeneous_pauli.toml"))
    idx = [i for i, n in enumerate(cfg.noise) if (n.px, n.py, n.pz) == (0.0002, 0.0004, 0.0004)]
    assert len(idx) == 1
    assert cfg.repetitions == 50 and all(m.shots == 1000 for m in cfg.methods)
    # keep the leading rows so per-run seeds equal those of a full run of the bundled sweep
    cfg = dataclasses.replace(cfg, noise=cfg.noise[:idx[0] + 1])
    table, labels = _summary_table(cfg)
    e, p = table[(labels[-1], "emre")]["mean_bias"], table[(labels[-1], "pec")]["mean_bias"]
    ok = e < p
    record_acceptance(7, ok, f"emre {e:.4f} vs pec {p:.4f} (need emre < pec)")
    assert ok


# ---------------------------------------------------------------- 8

def test_criterion_8_shot_planners():
    checks = {
        "pec(1, 0.1, 0.05)": (plan_shots_pec(1, 0.1, 0.05), 738),
        "pec(2, 0.1, 0.05)": (plan_shots_pec(2, 0.1, 0.05), 2952),
        "emre(0.1, 0.05)": (plan_shots_emre(0.1, 0.05), 738),
        "emre(0.05, 0.01)": (plan_shots_emre(0.05, 0.01), 4239),
    }
    # base 2 ln(2/p)/(c s)^2 with (c s) = 0.1 and p = 0.05 is 737.78; the s_incl^2 gamma_incl^2 factor multiplies it
    base = 200 * math.log(40)
    for s_incl, g_incl in [(1, 1), (2, 1), (1, 3), (2, 3), (1.5, 2)]:
        want = math.ceil(base * (s_incl * g_incl) ** 2)
        checks[f"hemre({s_incl}, {g_incl})"] = (plan_shots_hemre(s_incl, g_incl, 0.05, 2.0, 0.05), want)
    bad = {k: v for k, v in checks.items() if v[0] != v[1]}
    ok = not bad
    record_acceptance(8, ok, f"{len(checks) - len(bad)}/{len(checks)} exact integer checks" +
                      (f"; mismatches {bad}" if bad else ""))
    assert ok


# ---------------------------------------------------------------- 9

def _expected_branch(e_b, eps, s):
    t = eps + s - 2
    conds = {TRIVIAL: t >= 0 and abs(e_b) <= t, SMALL_S: t < 0 and abs(e_b) <= -t,
             UPPER: e_b > abs(t), LOWER: e_b < -abs(t)}
    return [k for k, v in conds.items() if v]


def test_criterion_9_flowchart_properties():
    rng = np.random.default_rng(9)
    n = 100_000
    s = 1 + rng.exponential(0.5, n)
    eps = rng.uniform(0, 1, n)
    near = rng.random(n) < 0.3
    eps[near] = np.clip(2 - s[near] + rng.normal(0, 1e-3, near.sum()), 0, None)
    e_b = rng.uniform(-1.5, 1.5, n) * (eps + s)
    branch_bad = sign_bad = range_bad = 0
    jump = 0.0
    h = 1e-12
    for x, ep, sv in zip(e_b, eps, s):
        r = emre_postprocess(float(x), float(ep), float(sv))
        want = _expected_branch(x, ep, sv)
        branch_bad += want != [r.branch]
        sign_bad += r.b < 0
        range_bad += abs(r.E) > 1
        edge = abs(ep + sv - 2)
        for x0 in (edge, -edge):
            lo = emre_postprocess(x0 - h, float(ep), float(sv)).E
            hi = emre_postprocess(x0 + h, float(ep), float(sv)).E
            jump = max(jump, abs(hi - lo))
        if sv < 2:
            lo = emre_postprocess(float(x), 2 - sv - h, float(sv)).E
            hi = emre_postprocess(float(x), 2 - sv + h, float(sv)).E
            jump = max(jump, abs(hi - lo))
    ok = branch_bad == sign_bad == range_bad == 0 and jump <= 1e-9
    record_acceptance(9, ok, f"{n} triples: branch mismatches {branch_bad}, b<0 {sign_bad}, |E|>1 {range_bad}, "
                             f"max boundary jump {jump:.1e}")
    assert ok
