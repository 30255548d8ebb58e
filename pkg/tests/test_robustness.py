import json

import numpy as np
import pytest

from emrekit.channels import Gate, NoiseModel
from emrekit.errors import InfeasibleCertificate, InvalidParameter, NonPauliNoise, UnsupportedNoise
from emrekit.linalg import X, Channel, haar_unitary
from emrekit.robustness import (CLOSED_FORM, POSITIVE_PART, certify_r_plus, closed_form_r_plus,
                                dephasing_certificate, depolarizing_certificate, dual_certificate_check,
                                emre_decompose, generic_certificate, pec_decompose_pauli,
                                pauli_weight_certificate, sandwich_bounds, verify_primal)

H = Gate("H", (0,))
CNOT = Gate("CNOT", (0, 1))


def random_gate(rng):
    return Gate.from_matrix(haar_unitary(2, rng), (0,))


@pytest.mark.parametrize("noise", [NoiseModel.depolarizing(0.0), NoiseModel.dephasing(0.0),
                                   NoiseModel.pauli(0, 0, 0)])
def test_pec_noiseless(noise):
    d = pec_decompose_pauli(H, noise)
    assert len(d.terms) == 1 and d.gamma == 1.0


def test_pec_dephasing_by_linear_solve():
    p = 0.1
    d = pec_decompose_pauli(H, NoiseModel.dephasing(p))
    # independent oracle: solve for weights (a, b) on {I, Z} with PTM diag inverse
    # a + b = 1, a - b = 1 / (1 - p)
    a = (1 + 1 / (1 - p)) / 2
    b = (1 - 1 / (1 - p)) / 2
    coeffs = {t.label.split(".")[1]: c for c, t in d.terms}
    assert coeffs["I"] == pytest.approx(a, abs=1e-12)
    assert coeffs["Z"] == pytest.approx(b, abs=1e-12)
    assert d.gamma == pytest.approx(abs(a) + abs(b))
    assert d.reconstruction_error() < 1e-10


@pytest.mark.parametrize("gate", [H, CNOT])
def test_pec_depolarizing(gate):
    d = pec_decompose_pauli(gate, NoiseModel.depolarizing(0.01))
    assert d.gamma > 1
    assert sum(d.coefficients) == pytest.approx(1, abs=1e-9)
    assert d.reconstruction_error() < 1e-10
    assert pec_decompose_pauli(gate, NoiseModel.depolarizing(1e-6)).gamma < 1.00001


def test_pec_errors():
    with pytest.raises(Exception) as exc:
        pec_decompose_pauli(H, NoiseModel.dephasing(1.0))
    assert "zero" in str(exc.value)
    amp = Channel.from_kraus([np.array([[1, 0], [0, np.sqrt(0.9)]]), np.array([[0, np.sqrt(0.1)], [0, 0]])])
    with pytest.raises(NonPauliNoise):
        pec_decompose_pauli(H, NoiseModel.probabilistic(0.2, amp))


def test_emre_closed_form_examples():
    d = emre_decompose(H, NoiseModel.dephasing(0.1), CLOSED_FORM)
    assert d.s == pytest.approx(1 + 0.1 / 1.9, abs=1e-12)
    d = emre_decompose(H, NoiseModel.depolarizing_ddim(0.01, d=2), CLOSED_FORM)
    assert d.s == pytest.approx(4 / 3.97, abs=1e-12)
    d = emre_decompose(H, NoiseModel.dephasing(0.0), CLOSED_FORM)
    assert d.s == 1.0 and d.residual[0] == 0.0


def test_emre_two_qubit_closed_form_is_product():
    p = 0.02
    d = emre_decompose(CNOT, NoiseModel.depolarizing(p), CLOSED_FORM)
    assert d.s == pytest.approx((4 / (4 - 3 * p)) ** 2, abs=1e-12)
    assert verify_primal(d) == pytest.approx(d.s - 1)


def test_emre_probabilistic_closed_form():
    p = 0.1
    d = emre_decompose(H, NoiseModel.probabilistic(p, Channel.from_unitary(X)), CLOSED_FORM)
    assert d.s == pytest.approx(1 / (1 - p))
    assert d.reconstruction_error() < 1e-10
    assert d.residual[1].is_cptp()


@pytest.mark.parametrize("noise", [NoiseModel.depolarizing(0.05), NoiseModel.dephasing(0.1),
                                   NoiseModel.pauli(0.01, 0.02, 0.03)])
@pytest.mark.parametrize("gate", [H, CNOT])
def test_positive_part_mode(noise, gate):
    pec = pec_decompose_pauli(gate, noise)
    d = emre_decompose(gate, noise, POSITIVE_PART)
    assert d.s == pytest.approx((pec.gamma + 1) / 2, abs=1e-12)
    assert d.reconstruction_error() < 1e-8
    assert d.residual[1].is_cptp()
    verify_primal(d)


def test_decomposition_json():
    d = emre_decompose(H, NoiseModel.dephasing(0.1), CLOSED_FORM)
    out = json.loads(json.dumps(d.to_json()))
    assert out["mode"] == "emre" and out["residual"]["coefficient"] == pytest.approx(d.s - 1)


def test_closed_form_values():
    assert closed_form_r_plus(NoiseModel.dephasing(0.0)).r_plus == 0
    assert closed_form_r_plus(NoiseModel.depolarizing_ddim(0.01, d=2)).r_plus == pytest.approx(0.03 / 3.97)
    r = closed_form_r_plus(NoiseModel.depolarizing(0.001), n_qubits=7)
    assert r.upper == pytest.approx((4 / 3.997) ** 7 - 1)
    assert r.upper == pytest.approx(0.005265, abs=1e-6)
    assert r.lower <= r.r_plus <= r.upper + 1e-12
    for rep in (r, closed_form_r_plus(NoiseModel.dephasing(0.3))):
        assert rep.gamma_plus == 2 * rep.r_plus + 1
    with pytest.raises(UnsupportedNoise):
        closed_form_r_plus(NoiseModel.pauli(0.1, 0, 0))


def test_closed_forms_monotone():
    ps = np.linspace(0.01, 0.99, 50)
    for make in (NoiseModel.dephasing, lambda p: NoiseModel.depolarizing_ddim(p, d=3)):
        vals = [closed_form_r_plus(make(p)).r_plus for p in ps]
        assert np.all(np.diff(vals) > 0)


def test_certificate_examples():
    r = dual_certificate_check(NoiseModel.depolarizing(0.1), H, depolarizing_certificate(H, 0.1))
    assert r.bound == pytest.approx(0.3 / 3.7, abs=1e-12) and r.feasible
    r = dual_certificate_check(NoiseModel.dephasing(0.2), H, dephasing_certificate(H, 0.2))
    assert r.bound == pytest.approx(0.2 / 1.8, abs=1e-12)
    assert r.n_checked >= 1000
    j = H.channel().choi.matrix
    r = dual_certificate_check(NoiseModel.dephasing(0.0), H, j / 4)
    assert abs(r.bound) < 1e-12


def test_rational_guess_is_not_a_feasible_lower_bound():
    # a certificate claiming R+ = 2/(2-p) would need beta = J^U (2/(2-p) + 1) / 4: infeasible
    p = 0.2
    j = H.channel().choi.matrix
    with pytest.raises(InfeasibleCertificate):
        dual_certificate_check(NoiseModel.dephasing(p), H, j * (2 / (2 - p) + 1) / 4, n_samples=50)


def test_certificate_rejects_non_psd():
    with pytest.raises(InvalidParameter):
        dual_certificate_check(NoiseModel.dephasing(0.1), H, -np.eye(4))


def test_general_pauli_certificate_tight(rng):
    noise = NoiseModel.pauli(0.01, 0.03, 0.02)
    g = random_gate(rng)
    rep = certify_r_plus(g, noise, n_samples=300, seed=1)
    assert rep.upper - rep.lower < 1e-9
    beta = generic_certificate(g, noise)
    assert dual_certificate_check(noise, g, beta, n_samples=300).feasible
    assert dual_certificate_check(noise, g, pauli_weight_certificate(g, noise), n_samples=300).feasible


def test_sandwich_noiseless_anchor():
    d = emre_decompose(H, NoiseModel.dephasing(0.0), CLOSED_FORM)
    t = sandwich_bounds(d, H)
    assert t.lower == pytest.approx(1.0)
    assert t.certified_lower == pytest.approx(0.0, abs=1e-12)
    assert t.upper == 0.0


@pytest.mark.parametrize("noise,exact", [(NoiseModel.dephasing(0.1), 0.1 / 1.9),
                                         (NoiseModel.depolarizing_ddim(0.05, d=2), 0.15 / 3.85)])
def test_sandwich_sandwich(noise, exact):
    d = emre_decompose(H, noise, CLOSED_FORM)
    t = sandwich_bounds(d, H)
    assert t.certified_lower <= exact + 1e-12
    assert exact <= t.upper + 1e-12


def test_sandwich_sandwich_random_gates(rng):
    models = [NoiseModel.dephasing(0.1), NoiseModel.depolarizing(0.05), NoiseModel.depolarizing_ddim(0.02),
              NoiseModel.probabilistic(0.1, Channel.from_unitary(X))]
    for _ in range(50):
        g = random_gate(rng)
        for m in models:
            t = sandwich_bounds(emre_decompose(g, m, CLOSED_FORM), g)
            r = closed_form_r_plus(m)
            assert t.certified_lower <= r.lower + 1e-9
            assert r.r_plus <= t.upper + 1e-9


def test_sandwich_needs_emre_mode():
    with pytest.raises(InvalidParameter):
        sandwich_bounds(pec_decompose_pauli(H, NoiseModel.dephasing(0.1)), H)
