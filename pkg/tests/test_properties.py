"""Property-based checks of the library invariants."""
import math

import numpy as np
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from emrekit.channels import Gate, NoiseModel, make_noise_channel
from emrekit.estimators import (emre_postprocess, hemre_select_greedy, plan_shots_emre, plan_shots_hemre,
                                plan_shots_pec)
from emrekit.errors import InfeasibleBias
from emrekit.linalg import choi_to_kraus, haar_unitary, kraus_to_choi, random_cptp
from emrekit.robustness import POSITIVE_PART, closed_form_r_plus, emre_decompose, pec_decompose_pauli

seeds = st.integers(0, 2**32 - 1)
small_p = st.floats(0.0, 0.2)


@st.composite
def pauli_noise(draw):
    px, py, pz = (draw(st.one_of(st.just(0.0), st.floats(1e-6, 0.1))) for _ in range(3))
    return NoiseModel.pauli(px, py, pz)


@settings(max_examples=40, deadline=None)
@given(seeds, st.sampled_from([2, 4]))
def test_choi_round_trip_and_trace(seed, d):
    ch = random_cptp(d, np.random.default_rng(seed))
    j = ch.choi.matrix
    assert abs(np.trace(j).real - d) < 1e-9
    j2 = kraus_to_choi(choi_to_kraus(j, d, d), d).matrix
    assert np.max(np.abs(j - j2)) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_ptm_of_composition(seed):
    rng = np.random.default_rng(seed)
    a, b = random_cptp(2, rng), random_cptp(2, rng)
    assert np.max(np.abs((a @ b).ptm() - a.ptm() @ b.ptm())) < 1e-10


@settings(max_examples=40, deadline=None)
@given(pauli_noise(), seeds, st.booleans())
def test_pec_reconstruction_and_gamma(noise, seed, two_qubit):
    u = haar_unitary(4 if two_qubit else 2, np.random.default_rng(seed))
    gate = Gate.from_matrix(u, (0, 1) if two_qubit else (0,))
    d = pec_decompose_pauli(gate, noise)
    assert abs(sum(d.coefficients) - 1) < 1e-9
    assert d.reconstruction_error() < 1e-8
    assert d.gamma >= 1 - 1e-12
    if noise.is_noiseless:
        assert abs(d.gamma - 1) < 1e-12
    else:
        assert d.gamma > 1
    e = emre_decompose(gate, noise, POSITIVE_PART)
    assert abs(e.s - (d.gamma + 1) / 2) < 1e-9
    assert e.s >= 1 - 1e-12
    assert e.reconstruction_error() < 1e-8


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(["dephasing", "depolarizing_ddim", "depolarizing_local"]), st.floats(0, 0.99),
       st.integers(1, 3))
def test_gamma_plus_definition(kind, p, n):
    noise = NoiseModel(kind, p=p)
    r = closed_form_r_plus(noise, n_qubits=n if kind != "depolarizing_ddim" else 1)
    assert r.gamma_plus == 2 * r.r_plus + 1
    assert r.lower <= r.r_plus + 1e-9 and r.r_plus <= r.upper + 1e-9


@settings(max_examples=30, deadline=None)
@given(pauli_noise())
def test_noise_channels_are_cptp(noise):
    assert make_noise_channel(noise, 1).is_cptp()
    assert make_noise_channel(noise, 2).is_cptp()


eb_values = st.floats(-10, 10, allow_nan=False)
eps_values = st.floats(0, 3, allow_nan=False)
s_values = st.floats(1, 5, allow_nan=False)


@settings(max_examples=500, deadline=None)
@given(eb_values, eps_values, s_values, st.sampled_from([1.0, 0.5, 3.0]))
def test_flowchart_invariants(eb, eps, s, o):
    e, b, branch = emre_postprocess(eb, eps, s, o_max=o)
    assert b >= 0 and abs(e) <= o + 1e-12
    t = eps + (s - 1) * o  # distance guaranteed between E_B and the truth
    assert branch in {"Trivial", "NonTrivialUpper", "NonTrivialLower", "SmallS"}
    # any truth within t of E_B and inside [-o, o] lies in [E - b, E + b]
    for truth in np.linspace(max(-o, eb - t), min(o, eb + t), 5):
        if max(-o, eb - t) <= min(o, eb + t):
            assert abs(truth - e) <= b + 1e-9


@settings(max_examples=300, deadline=None)
@given(eb_values, eps_values, s_values, st.floats(1e-10, 1e-7))
def test_flowchart_continuity(eb, eps, s, h):
    e0, _, _ = emre_postprocess(eb, eps, s)
    for de, ds, dx in [(h, 0, 0), (0, h, 0), (0, 0, h)]:
        e1, _, _ = emre_postprocess(eb + de, eps + dx, s + ds)
        assert abs(e1 - e0) <= 2 * h + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 10), st.floats(1.0, 1.5)), min_size=1, max_size=6),
       st.floats(0, 0.5), st.floats(0, 0.2))
def test_greedy_respects_budget(rows, delta, eps):
    table = [(f"G{i}", f, s) for i, (f, s) in enumerate(rows)]
    try:
        sel = hemre_select_greedy(table, delta, eps)
    except InfeasibleBias:
        assert delta - eps + 1 < 1
        return
    assert sel.s_incl <= (delta + 1 - eps) * (1 + 1e-12)
    freq = {name: f for name, f, _ in table}
    assert all(0 <= m <= freq[name] for name, m in sel.counts.items())


@settings(max_examples=100, deadline=None)
@given(st.floats(1, 5), st.floats(0.01, 0.5), st.floats(0.001, 0.5))
def test_shot_planner_scaling(gamma, prec, p_fail):
    base = 2 / prec**2 * math.log(2 / p_fail)
    assert plan_shots_pec(gamma, prec, p_fail) == math.ceil(gamma**2 * base - 1e-9 * gamma**2 * base) or \
        abs(plan_shots_pec(gamma, prec, p_fail) - gamma**2 * base) <= 1
    # the EMRE count does not depend on gamma or s at all
    assert plan_shots_emre(prec, p_fail) == plan_shots_hemre(gamma, 1.0, prec, gamma, p_fail)
    assume(gamma > 1.01)
    assert plan_shots_pec(gamma, prec, p_fail) >= plan_shots_pec(1.0, prec, p_fail)
