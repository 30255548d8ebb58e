"""Per-gate mitigation plans shared by the simulator and the estimators."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .channels import CircuitIR, Gate, NoiseModel, noisy_gate_channel
from .errors import NonInvertibleNoise, NonPauliNoise, UnsupportedNoise
from .linalg import Channel
from .robustness import POSITIVE_PART, SignedDecomposition, emre_decompose, pec_decompose_pauli

APPROXIMATE = "approximate"
FULL = "full"
UNMITIGATED = "unmitigated"


@dataclass
class GatePlan:
    kind: str
    decomposition: SignedDecomposition | None = None
    s: float = 1.0
    gamma: float = 1.0

    def options(self, gate: Gate, noise: NoiseModel) -> list[tuple[float, int, Channel]]:
        """Sampling options ``(probability, sign, local channel)`` for this gate."""
        if self.kind == UNMITIGATED:
            return [(1.0, 1, noisy_gate_channel(gate, noise))]
        d = self.decomposition
        probs = d.probabilities
        return [(float(p), int(sg), ch) for p, sg, (_, ch) in zip(probs, d.signs, d.terms)]


@dataclass
class MitigationPlan:
    per_gate: list[GatePlan]
    emre_mode: str = POSITIVE_PART
    infeasible: bool = False
    meta: dict = field(default_factory=dict)

    def _prod(self, attr: str, kinds: tuple[str, ...]) -> float:
        out = 1.0
        for g in self.per_gate:
            if g.kind in kinds:
                out *= getattr(g, attr)
        return out

    @property
    def s_incl(self) -> float:
        return self._prod("s", (APPROXIMATE,))

    @property
    def gamma_incl(self) -> float:
        return self._prod("gamma", (FULL,))

    @property
    def s_total(self) -> float:
        # unmitigated gates contribute s = 1
        return self._prod("s", (APPROXIMATE, FULL))

    @property
    def kinds(self) -> list[str]:
        return [g.kind for g in self.per_gate]

    def count(self, kind: str) -> int:
        return sum(1 for g in self.per_gate if g.kind == kind)

    def to_json(self) -> dict:
        return {"kinds": self.kinds, "s_incl": self.s_incl, "gamma_incl": self.gamma_incl,
                "s_total": self.s_total, "emre_mode": self.emre_mode, "infeasible": self.infeasible}


class DecompositionCache:
    """Memoises per-gate decompositions; every instance of a gate name and arity shares the same noise."""

    def __init__(self, noise: NoiseModel, emre_mode: str = POSITIVE_PART):
        self.noise = noise
        self.emre_mode = emre_mode
        self._emre: dict = {}
        self._pec: dict = {}

    @staticmethod
    def _key(gate: Gate):
        return (gate.name, gate.arity, None if gate.custom is None else gate.custom.tobytes())

    def emre(self, gate: Gate) -> SignedDecomposition:
        k = self._key(gate)
        if k not in self._emre:
            self._emre[k] = emre_decompose(gate, self.noise, self.emre_mode)
        return self._emre[k]

    def pec(self, gate: Gate) -> SignedDecomposition | None:
        k = self._key(gate)
        if k not in self._pec:
            try:
                self._pec[k] = pec_decompose_pauli(gate, self.noise)
            except (NonPauliNoise, NonInvertibleNoise, UnsupportedNoise):
                self._pec[k] = None
        return self._pec[k]

    def gate_plan(self, gate: Gate, kind: str) -> GatePlan:
        if kind == UNMITIGATED:
            return GatePlan(UNMITIGATED)
        pec = self.pec(gate)
        gamma = pec.gamma if pec is not None else math.nan
        if kind == APPROXIMATE:
            d = self.emre(gate)
            return GatePlan(APPROXIMATE, d, s=d.s, gamma=gamma)
        if pec is None:
            raise NonPauliNoise(f"gate {gate.name} has no Pauli quasi-probability decomposition")
        try:
            s = self.emre(gate).s
        except (NonPauliNoise, UnsupportedNoise):
            s = (pec.gamma + 1) / 2
        return GatePlan(FULL, pec, s=s, gamma=pec.gamma)


def build_plan(circuit: CircuitIR, kinds: list[str], emre_mode: str = POSITIVE_PART,
               cache: DecompositionCache | None = None) -> MitigationPlan:
    """Plan with an explicit kind per gate; unmitigated gate classes override the requested kind."""
    cache = cache or DecompositionCache(circuit.noise, emre_mode)
    per_gate = []
    for gate, kind in zip(circuit.gates, kinds):
        if not circuit.noise.mitigates(gate):
            kind = UNMITIGATED
        per_gate.append(cache.gate_plan(gate, kind))
    return MitigationPlan(per_gate, emre_mode=emre_mode)


def plan_uniform(circuit: CircuitIR, kind: str, emre_mode: str = POSITIVE_PART) -> MitigationPlan:
    return build_plan(circuit, [kind] * len(circuit.gates), emre_mode)


def plan_none(circuit: CircuitIR) -> MitigationPlan:
    return plan_uniform(circuit, UNMITIGATED)


def plan_pec(circuit: CircuitIR) -> MitigationPlan:
    return plan_uniform(circuit, FULL)


def plan_emre(circuit: CircuitIR, emre_mode: str = POSITIVE_PART) -> MitigationPlan:
    return plan_uniform(circuit, APPROXIMATE, emre_mode)
