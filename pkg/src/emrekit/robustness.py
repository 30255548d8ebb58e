"""Quasi-probability and generalized decompositions, robustness values and their certificates.

Two kinds of signed decomposition of an ideal gate ``U`` are produced here:

* PEC mode: ``U = sum_i eta_i (E . P_i . U)`` with Pauli ``P_i`` and ``sum_i eta_i = 1``;
  the sampling overhead is ``gamma = sum_i |eta_i|``.
* EMRE mode: ``U = s B - (s - 1) N`` with ``B`` a convex mixture of implementable
  operations and ``N`` any channel; ``s - 1`` upper-bounds the generalized robustness.

Lower bounds come from dual-feasible matrices ``beta``: whenever
``0 <= Tr[J^Y beta] <= 1`` for every implementable ``Y``, ``Tr[J^U beta] - 1``
lower-bounds the generalized robustness.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .channels import Gate, NoiseModel, gate_noise_channel, pauli_probabilities
from .errors import (InfeasibleCertificate, InvalidParameter, NonInvertibleNoise,
                     NonPauliNoise, UnsupportedNoise)
from .linalg import (Channel, max_entangled, min_eigenvalue, pauli_commutation_matrix,
                     pauli_labels, pauli_string, random_cptp, superop_to_choi)

PEC = "pec"
EMRE = "emre"
CLOSED_FORM = "closed_form"
POSITIVE_PART = "positive_part"


@dataclass
class SignedDecomposition:
    """Signed mixture of channels reproducing ``target``.

    ``terms`` hold the implementable pieces. In EMRE mode their coefficients are
    all positive and sum to ``s``; ``residual`` is ``(s - 1, N)``.
    """

    target: Channel
    terms: list[tuple[float, Channel]]
    mode: str
    residual: tuple[float, Channel] | None = None
    method: str = ""

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([c for c, _ in self.terms])

    @property
    def gamma(self) -> float:
        """Sum of absolute coefficients of the implementable terms."""
        return float(np.sum(np.abs(self.coefficients)))

    @property
    def s(self) -> float:
        if self.mode == EMRE:
            return float(np.sum(self.coefficients))
        c = self.coefficients
        return float(np.sum(c[c > 0]))

    @property
    def probabilities(self) -> np.ndarray:
        a = np.abs(self.coefficients)
        return a / a.sum()

    @property
    def signs(self) -> np.ndarray:
        return np.sign(self.coefficients).astype(int)

    def reconstruct(self) -> np.ndarray:
        total = sum(c * ch.superop for c, ch in self.terms)
        if self.residual is not None:
            coef, ch = self.residual
            total = total - coef * ch.superop
        return total

    def reconstruction_error(self) -> float:
        return float(np.max(np.abs(self.reconstruct() - self.target.superop)))

    def positive_part(self) -> Channel:
        """The normalised convex mixture ``B`` (EMRE mode)."""
        s = self.s
        sup = sum((c / s) * ch.superop for c, ch in self.terms if c > 0)
        return Channel(sup, self.target.dim_in, label="B")

    def to_json(self) -> dict:
        out = {
            "mode": self.mode,
            "method": self.method,
            "gamma": self.gamma,
            "s": self.s,
            "terms": [{"coefficient": float(c), "op": ch.label} for c, ch in self.terms],
        }
        if self.residual is not None:
            out["residual"] = {"coefficient": float(self.residual[0]), "op": self.residual[1].label}
        return out


@dataclass
class RobustnessReport:
    r_plus: float
    upper: float
    lower: float
    method: str
    gamma_plus: float = field(init=False)

    def __post_init__(self):
        self.gamma_plus = 2 * self.r_plus + 1

    def to_json(self) -> dict:
        return {"r_plus": self.r_plus, "gamma_plus": self.gamma_plus, "upper": self.upper,
                "lower": self.lower, "method": self.method}


@dataclass
class CertificateReport:
    bound: float
    max_constraint: float
    min_constraint: float
    n_checked: int

    @property
    def feasible(self) -> bool:
        return self.min_constraint >= -1e-8 and self.max_constraint <= 1 + 1e-8


class SandwichBounds(NamedTuple):
    """``lower`` is the raw ``Tr[Phi+ J^{E'}] / (d^2 s)``; the dual objective subtracts one."""

    lower: float
    upper: float

    @property
    def certified_lower(self) -> float:
        return self.lower - 1.0


# ---------------------------------------------------------------- PEC

def _noise_for(gate: Gate, noise: NoiseModel) -> Channel | None:
    return gate_noise_channel(gate, noise)


def pauli_inverse_coefficients(noise_channel: Channel, atol: float = 1e-10) -> dict[str, float]:
    """Pauli weights ``eta`` with ``sum_i eta_i P_i . P_i = E^{-1}`` for a Pauli-diagonal ``E``."""
    n = noise_channel.n_qubits
    r = noise_channel.ptm()
    off = r - np.diag(np.diag(r))
    if np.max(np.abs(off), initial=0.0) > atol:
        raise NonPauliNoise("noise PTM is not diagonal")
    lam = np.diag(r)
    if np.min(np.abs(lam)) < 1e-12:
        raise NonInvertibleNoise("noise PTM has a zero eigenvalue")
    c = pauli_commutation_matrix(n)
    eta = c @ (1.0 / lam) / 4**n
    return {lab: float(e) for lab, e in zip(pauli_labels(n), eta) if abs(e) > 1e-15}


def pec_decompose_pauli(gate: Gate, noise: NoiseModel) -> SignedDecomposition:
    u = gate.channel()
    e = _noise_for(gate, noise)
    if e is None:
        return SignedDecomposition(u, [(1.0, u)], PEC, method="pauli_inverse")
    eta = pauli_inverse_coefficients(e)
    terms = []
    for lab, coef in eta.items():
        p = Channel.from_unitary(pauli_string(lab), lab)
        term = e @ p @ u
        term.label = f"E.{lab}.{gate.name}"
        terms.append((coef, term))
    return SignedDecomposition(u, terms, PEC, method="pauli_inverse")


# ---------------------------------------------------------------- EMRE

def identity_weight(gate: Gate, noise: NoiseModel) -> float:
    """Weight ``w`` of the identity in ``E = w id + (1 - w) N`` on the gate's qubits."""
    if not noise.applies_to(gate):
        return 1.0
    if noise.kind == "probabilistic":
        return (1 - noise.p) ** gate.arity
    probs = pauli_probabilities(noise, gate.arity)
    if probs is None:
        raise UnsupportedNoise(f"no probabilistic form for {noise.kind}")
    return probs["I" * gate.arity]


def emre_decompose(gate: Gate, noise: NoiseModel, mode: str = POSITIVE_PART) -> SignedDecomposition:
    u = gate.channel()
    e = _noise_for(gate, noise)
    if e is None:
        return SignedDecomposition(u, [(1.0, u)], EMRE, residual=(0.0, u), method=mode)
    if mode == CLOSED_FORM:
        if noise.kind == "depolarizing_ddim" and noise.d != 2 and noise.attachment != "joint":
            raise UnsupportedNoise("qudit depolarizing noise cannot follow a qubit gate")
        w = identity_weight(gate, noise)
        b = e @ u
        b.label = f"E.{gate.name}"
        s = 1.0 / w
        if w >= 1.0:
            return SignedDecomposition(u, [(1.0, b)], EMRE, residual=(0.0, u), method=mode)
        # N = (E - w id) / (1 - w), then follow by U
        n_sup = (e.superop - w * np.eye(e.superop.shape[0])) / (1 - w)
        n = Channel(n_sup, e.dim_in, label="N") @ u
        n.label = f"N.{gate.name}"
        return SignedDecomposition(u, [(s, b)], EMRE, residual=(s - 1.0, n), method=mode)
    if mode == POSITIVE_PART:
        pec = pec_decompose_pauli(gate, noise)
        pos = [(c, ch) for c, ch in pec.terms if c > 0]
        neg = [(c, ch) for c, ch in pec.terms if c < 0]
        q_minus = -sum(c for c, _ in neg)
        if q_minus > 0:
            sup = sum((-c / q_minus) * ch.superop for c, ch in neg)
            residual = (q_minus, Channel(sup, u.dim_in, label=f"B-.{gate.name}"))
        else:
            residual = (0.0, u)
        return SignedDecomposition(u, pos, EMRE, residual=residual, method=mode)
    raise InvalidParameter(f"unknown EMRE mode {mode!r}")


def verify_primal(decomp: SignedDecomposition, atol: float = 1e-9) -> float:
    """Check that an EMRE decomposition is primal feasible and return its value ``s - 1``."""
    if decomp.mode != EMRE:
        raise InvalidParameter("primal check needs an EMRE-mode decomposition")
    err = decomp.reconstruction_error()
    if err > 1e-8:
        raise InvalidParameter(f"decomposition does not reproduce the target (max error {err:.2e})")
    for c, ch in decomp.terms:
        if c < 0 or not ch.is_cptp(atol):
            raise InvalidParameter(f"term {ch.label} is not a positively weighted channel")
    if decomp.residual is not None and decomp.residual[0] > 0 and not decomp.residual[1].is_cptp(atol):
        raise InvalidParameter("residual is not CPTP")
    return decomp.s - 1.0


# ---------------------------------------------------------------- closed forms

def closed_form_r_plus(noise: NoiseModel, n_qubits: int = 1, d: int | None = None) -> RobustnessReport:
    """Analytic generalized robustness for the structured noise families."""
    p = noise.p
    if noise.is_noiseless:
        return RobustnessReport(0.0, 0.0, 0.0, CLOSED_FORM)
    if noise.kind == "dephasing":
        if n_qubits == 1:
            r = p / (2 - p)
            return RobustnessReport(r, r, r, CLOSED_FORM)
        # product of identity weights; certified by the Pauli-weight dual
        r = (2 / (2 - p)) ** n_qubits - 1
        return RobustnessReport(r, r, r, "certified_bounds")
    if noise.kind == "depolarizing_ddim":
        d = noise.d if d is None else d
        r = (d * d - 1) * p / (d * d + p - d * d * p)
        return RobustnessReport(r, r, r, CLOSED_FORM)
    if noise.kind == "depolarizing_local":
        upper = (4 / (4 - 3 * p)) ** n_qubits - 1
        if n_qubits == 1:
            return RobustnessReport(upper, upper, upper, CLOSED_FORM)
        # beta = J^U / (d^2 q_I) certifies the matching lower bound (identity weight is the largest)
        lower = 1 / (1 - 3 * p / 4) ** n_qubits - 1
        return RobustnessReport(upper, upper, lower, "certified_bounds")
    if noise.kind == "probabilistic":
        if p >= 1:
            raise UnsupportedNoise("p = 1 has no probabilistic-form bound")
        upper = (1 / (1 - p)) ** n_qubits - 1
        lower = 0.0
        if n_qubits == 1:
            gate = Gate("I", (0,))
            beta = generic_certificate(gate, noise)
            lower = max(0.0, float(np.real(np.trace(gate.channel().choi.matrix @ beta))) - 1)
        return RobustnessReport(upper, upper, lower, "certified_bounds")
    raise UnsupportedNoise(f"no closed form for {noise.kind}")


# ---------------------------------------------------------------- bounds and certificates

def sandwich_bounds(decomp: SignedDecomposition, gate: Gate) -> SandwichBounds:
    """Bounds from a known decomposition: ``E' = s B . U^dag``."""
    if decomp.mode != EMRE:
        raise InvalidParameter("sandwich bounds need an EMRE-mode decomposition")
    u = gate.channel()
    if u.dim_in != decomp.target.dim_in:
        from .errors import DimensionMismatch
        raise DimensionMismatch("gate and decomposition act on different dimensions")
    d = u.dim_in
    s = decomp.s
    sb = sum(c * ch.superop for c, ch in decomp.terms)
    e_prime = sb @ u.adjoint().superop
    j = superop_to_choi(e_prime, d, d)
    raw = float(np.real(np.trace(max_entangled(d) @ j))) / (d * d * s)
    return SandwichBounds(raw, s - 1.0)


def depolarizing_certificate(gate: Gate, p: float, d: int | None = None) -> np.ndarray:
    d = 2**gate.arity if d is None else d
    return gate.channel().choi.matrix / (d * d + p - d * d * p)


def dephasing_certificate(gate: Gate, p: float) -> np.ndarray:
    return gate.channel().choi.matrix / (2 * (2 - p))


def pauli_weight_certificate(gate: Gate, noise: NoiseModel) -> np.ndarray:
    """``beta = J^U / (d^2 q_I)``; feasible whenever the identity carries the largest Pauli weight."""
    d = 2**gate.arity
    return gate.channel().choi.matrix / (d * d * identity_weight(gate, noise))


def generic_certificate(gate: Gate, noise: NoiseModel) -> np.ndarray:
    """``beta = J^U / (d lambda_max((id (x) E^dag)(J^U)))``, feasible for any noise channel."""
    u = gate.channel()
    d = u.dim_in
    e = _noise_for(gate, noise)
    ju = u.choi.matrix
    if e is None:
        return ju / (d * d)
    m = superop_to_choi(e.adjoint().superop @ u.superop, d, d)
    lam = float(np.linalg.eigvalsh((m + m.conj().T) / 2)[-1])
    return ju / (d * lam)


def dual_certificate_check(noise: NoiseModel, gate: Gate, beta: np.ndarray, n_samples: int = 1000,
                           seed: int = 0, tol: float = 1e-8) -> CertificateReport:
    """Sample the dual constraints ``0 <= Tr[J^{E.W} beta] <= 1`` and return the certified bound."""
    beta = np.asarray(beta)
    if min_eigenvalue(beta) < -1e-9:
        raise InvalidParameter("beta is not positive semidefinite")
    u = gate.channel()
    d = u.dim_in
    e = _noise_for(gate, noise) or Channel.identity(d)
    rng = np.random.default_rng(seed)
    ws = [u, Channel.identity(d)]
    n = gate.arity
    ws += [Channel.from_unitary(pauli_string(lab)) @ u for lab in pauli_labels(n)[1:]]
    ws += [random_cptp(d, rng, env_dim=d) for _ in range(n_samples)]
    bt = beta.T.reshape(-1)
    vals = []
    for w in ws:
        j = superop_to_choi(e.superop @ w.superop, d, d)
        vals.append(float(np.real(j.reshape(-1) @ bt)))
    vals = np.array(vals)
    hi, lo = float(vals.max()), float(vals.min())
    if hi > 1 + tol or lo < -tol:
        raise InfeasibleCertificate(f"dual constraint violated: range [{lo:.3e}, {hi:.12f}]", hi)
    bound = float(np.real(np.trace(u.choi.matrix @ beta))) - 1.0
    return CertificateReport(bound, hi, lo, len(ws))


def certify_r_plus(gate: Gate, noise: NoiseModel, n_samples: int = 1000, seed: int = 0) -> RobustnessReport:
    """Pair the closed-form primal decomposition with the Pauli-weight dual certificate."""
    decomp = emre_decompose(gate, noise, CLOSED_FORM)
    upper = verify_primal(decomp)
    if noise.kind == "probabilistic":
        beta = generic_certificate(gate, noise)
    else:
        beta = pauli_weight_certificate(gate, noise)
    cert = dual_certificate_check(noise, gate, beta, n_samples=n_samples, seed=seed)
    lower = max(cert.bound, 0.0)
    return RobustnessReport(upper, upper, lower, "certified_bounds")
