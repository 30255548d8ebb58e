"""Gate library, noise models, register embedding and circuit IR."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionMismatch, InvalidProbability, UnsupportedNoise
from .linalg import Channel, PAULIS, is_unitary, kron, pauli_labels, tensor_all

_T = np.diag([1, np.exp(1j * np.pi / 4)])
_CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
_SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)

GATE_MATRICES = {
    "I": np.eye(2, dtype=complex),
    "H": np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2),
    "X": PAULIS["X"],
    "Y": PAULIS["Y"],
    "Z": PAULIS["Z"],
    "S": np.diag([1, 1j]).astype(complex),
    "T": _T.astype(complex),
    "Tdg": _T.conj().astype(complex),
    "CNOT": _CNOT,
    "SWAP": _SWAP,
}
GATE_ARITY = {name: int(np.log2(m.shape[0])) for name, m in GATE_MATRICES.items()}


@dataclass(frozen=True)
class Gate:
    """A gate placement. ``matrix`` acts on ``qubits`` in the listed order."""

    name: str
    qubits: tuple[int, ...]
    custom: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        if self.custom is None and self.name not in GATE_MATRICES:
            raise ValueError(f"unknown gate {self.name!r}")
        if len(set(self.qubits)) != len(self.qubits):
            raise ValueError(f"gate {self.name} has repeated qubits {self.qubits}")
        if self.matrix.shape != (2 ** len(self.qubits),) * 2:
            raise DimensionMismatch(f"gate {self.name} acts on {len(self.qubits)} qubits")
        if not is_unitary(self.matrix):
            raise ValueError(f"gate {self.name} is not unitary")

    @classmethod
    def from_matrix(cls, matrix, qubits, name: str = "U") -> "Gate":
        return cls(name, tuple(qubits), np.asarray(matrix, dtype=complex))

    @property
    def matrix(self) -> np.ndarray:
        return GATE_MATRICES[self.name] if self.custom is None else self.custom

    @property
    def arity(self) -> int:
        return len(self.qubits)

    @property
    def gate_class(self) -> str:
        return "1q" if self.arity == 1 else "2q"

    def channel(self) -> Channel:
        return Channel.from_unitary(self.matrix, self.name)


# ---------------------------------------------------------------- noise

NOISE_KINDS = ("none", "depolarizing_local", "depolarizing_ddim", "dephasing", "pauli", "probabilistic")
ATTACHMENTS = ("local", "joint", "none")
GATE_CLASSES = frozenset({"1q", "2q"})


@dataclass(frozen=True)
class NoiseModel:
    """Noise attached after gates.

    ``attachment="local"`` puts one independent single-qubit channel on every
    qubit a gate touches; ``"joint"`` uses one channel on all touched qubits
    (the d-dimensional form). ``noisy_gate_classes`` decides where noise is
    applied, ``mitigated_gate_classes`` where mitigation is allowed to act.
    """

    kind: str = "none"
    p: float = 0.0
    px: float = 0.0
    py: float = 0.0
    pz: float = 0.0
    d: int = 2
    channel: Channel | None = field(default=None, compare=False)
    attachment: str = "local"
    noisy_gate_classes: frozenset = GATE_CLASSES
    mitigated_gate_classes: frozenset = GATE_CLASSES

    def __post_init__(self):
        object.__setattr__(self, "noisy_gate_classes", frozenset(self.noisy_gate_classes))
        object.__setattr__(self, "mitigated_gate_classes", frozenset(self.mitigated_gate_classes))
        if self.kind not in NOISE_KINDS:
            raise UnsupportedNoise(f"unknown noise kind {self.kind!r}")
        if self.attachment not in ATTACHMENTS:
            raise ValueError(f"unknown attachment {self.attachment!r}")
        for name in ("p", "px", "py", "pz"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidProbability(f"{name}={v} outside [0, 1]")
        if self.px + self.py + self.pz > 1.0 + 1e-12:
            raise InvalidProbability("px + py + pz exceeds 1")
        if self.kind == "probabilistic" and self.channel is None:
            raise ValueError("probabilistic noise needs a channel N")

    # convenience constructors
    @classmethod
    def none(cls) -> "NoiseModel":
        return cls("none", attachment="none")

    @classmethod
    def depolarizing(cls, p: float, **kw) -> "NoiseModel":
        return cls("depolarizing_local", p=p, **kw)

    @classmethod
    def depolarizing_ddim(cls, p: float, d: int = 2, **kw) -> "NoiseModel":
        return cls("depolarizing_ddim", p=p, d=d, **kw)

    @classmethod
    def dephasing(cls, p: float, **kw) -> "NoiseModel":
        return cls("dephasing", p=p, **kw)

    @classmethod
    def pauli(cls, px: float, py: float, pz: float, **kw) -> "NoiseModel":
        return cls("pauli", px=px, py=py, pz=pz, **kw)

    @classmethod
    def probabilistic(cls, p: float, channel: Channel, **kw) -> "NoiseModel":
        return cls("probabilistic", p=p, channel=channel, **kw)

    @property
    def is_noiseless(self) -> bool:
        if self.kind == "none" or self.attachment == "none":
            return True
        if self.kind == "pauli":
            return self.px == self.py == self.pz == 0.0
        return self.p == 0.0

    @property
    def total_probability(self) -> float:
        return self.px + self.py + self.pz if self.kind == "pauli" else self.p

    @property
    def label(self) -> str:
        if self.kind == "pauli":
            return f"pauli({self.px:g},{self.py:g},{self.pz:g})"
        if self.kind == "none":
            return "none"
        if self.kind == "depolarizing_ddim":
            return f"depolarizing_ddim(p={self.p:g},d={self.d})"
        return f"{self.kind}(p={self.p:g})"

    def applies_to(self, gate: Gate) -> bool:
        return not self.is_noiseless and gate.gate_class in self.noisy_gate_classes

    def mitigates(self, gate: Gate) -> bool:
        return gate.gate_class in self.mitigated_gate_classes


def _weyl_operators(d: int) -> list[np.ndarray]:
    """Generalised Pauli (clock and shift) basis of ``d x d`` unitaries."""
    omega = np.exp(2j * np.pi / d)
    shift = np.roll(np.eye(d), 1, axis=0)
    clock = np.diag(omega ** np.arange(d))
    return [np.linalg.matrix_power(shift, a) @ np.linalg.matrix_power(clock, b)
            for a in range(d) for b in range(d)]


def pauli_probabilities(model: NoiseModel, num_qubits: int = 1) -> dict[str, float] | None:
    """Pauli-mixture weights of the noise on ``num_qubits`` qubits, or ``None`` if not a Pauli channel."""
    if model.is_noiseless:
        return {"I" * num_qubits: 1.0}
    if model.kind == "depolarizing_ddim" and model.attachment == "joint":
        d = 2**num_qubits
        w = {lab: model.p / d**2 for lab in pauli_labels(num_qubits)}
        w["I" * num_qubits] += 1 - model.p
        return w
    if model.kind == "probabilistic":
        return None
    single = _single_qubit_pauli_weights(model)
    if single is None:
        return None
    if model.attachment == "joint" and num_qubits > 1:
        raise UnsupportedNoise(f"joint attachment is not defined for {model.kind}")
    out = {}
    for lab in pauli_labels(num_qubits):
        out[lab] = float(np.prod([single[c] for c in lab]))
    return out


def _single_qubit_pauli_weights(model: NoiseModel) -> dict[str, float] | None:
    p = model.p
    if model.kind == "depolarizing_local":
        return {"I": 1 - 3 * p / 4, "X": p / 4, "Y": p / 4, "Z": p / 4}
    if model.kind == "depolarizing_ddim":
        if model.d != 2:
            return None
        return {"I": 1 - 3 * p / 4, "X": p / 4, "Y": p / 4, "Z": p / 4}
    if model.kind == "dephasing":
        return {"I": 1 - p / 2, "X": 0.0, "Y": 0.0, "Z": p / 2}
    if model.kind == "pauli":
        return {"I": 1 - model.px - model.py - model.pz, "X": model.px, "Y": model.py, "Z": model.pz}
    return None


def make_noise_channel(model: NoiseModel, num_qubits: int = 1) -> Channel:
    """Kraus set for the noise acting on ``num_qubits`` qubits after a gate."""
    if model.is_noiseless:
        return Channel.identity(2**num_qubits)
    if model.kind == "depolarizing_ddim" and (model.d != 2 or model.attachment == "joint"):
        d = model.d if model.attachment != "joint" else 2**num_qubits
        if model.attachment != "joint" and num_qubits != 1:
            raise UnsupportedNoise("d-dimensional depolarizing with local attachment acts on one qudit")
        ops = _weyl_operators(d)
        kraus = [np.sqrt(1 - model.p + model.p / d**2) * ops[0]]
        kraus += [np.sqrt(model.p / d**2) * w for w in ops[1:]]
        return Channel.from_kraus(kraus, f"E[{model.label}]")
    if model.kind == "probabilistic":
        n = model.channel
        if n.dim_in != 2:
            raise UnsupportedNoise("probabilistic noise channel must act on one qubit")
        single_kraus = [np.sqrt(1 - model.p) * np.eye(2)] + [np.sqrt(model.p) * k for k in n.kraus]
        single = Channel.from_kraus(single_kraus, "E")
        if model.attachment == "joint" and num_qubits > 1:
            raise UnsupportedNoise("joint attachment is not defined for probabilistic noise")
        ch = tensor_all([single] * num_qubits) if num_qubits > 1 else single
        ch.label = f"E[{model.label}]"
        return ch
    probs = pauli_probabilities(model, num_qubits)
    return Channel.pauli_channel(probs, f"E[{model.label}]")


def gate_noise_channel(gate: Gate, model: NoiseModel) -> Channel | None:
    """Noise following ``gate`` (on the gate's own qubits), or ``None`` if the gate is noiseless."""
    if not model.applies_to(gate):
        return None
    return make_noise_channel(model, gate.arity)


def noisy_gate_channel(gate: Gate, model: NoiseModel) -> Channel:
    u = gate.channel()
    e = gate_noise_channel(gate, model)
    return u if e is None else e @ u


# ---------------------------------------------------------------- embedding

def embed_operator(op: np.ndarray, qubits: Sequence[int], n_qubits: int) -> np.ndarray:
    """Full-register matrix of an operator acting on ``qubits`` (in that order)."""
    qubits = list(qubits)
    k = len(qubits)
    if op.shape != (2**k, 2**k):
        raise DimensionMismatch(f"operator shape {op.shape} does not match {k} qubits")
    if any(q < 0 or q >= n_qubits for q in qubits) or len(set(qubits)) != k:
        raise DimensionMismatch(f"qubits {qubits} invalid for a {n_qubits}-qubit register")
    rest = [q for q in range(n_qubits) if q not in qubits]
    full = np.kron(op, np.eye(2 ** len(rest)))
    # full acts on order (qubits..., rest...); permute to natural order
    order = qubits + rest
    perm = [order.index(q) for q in range(n_qubits)]
    t = full.reshape([2] * (2 * n_qubits))
    t = t.transpose(perm + [n_qubits + p for p in perm])
    return t.reshape(2**n_qubits, 2**n_qubits)


def embed(item, n_qubits: int, qubits: Sequence[int] | None = None) -> Channel:
    """Extend a gate (or a local channel on ``qubits``) to the full register."""
    if isinstance(item, Gate):
        return Channel.from_unitary(embed_operator(item.matrix, item.qubits, n_qubits), item.name)
    if qubits is None:
        raise DimensionMismatch("embedding a channel needs target qubits")
    kraus = [embed_operator(k, qubits, n_qubits) for k in item.kraus]
    return Channel.from_kraus(kraus, item.label)


# ---------------------------------------------------------------- circuits

@dataclass
class CircuitIR:
    n_qubits: int
    gates: list[Gate]
    noise: NoiseModel = field(default_factory=NoiseModel.none)
    observable: str | None = None
    input_state: str | None = None

    def __post_init__(self):
        if self.observable is None:
            self.observable = "Z" + "I" * (self.n_qubits - 1)
        if self.input_state is None:
            self.input_state = "0" * self.n_qubits
        if len(self.observable) != self.n_qubits or set(self.observable.upper()) - set("IXYZ"):
            raise DimensionMismatch(f"observable {self.observable!r} must be a Pauli string of length {self.n_qubits}")
        if len(self.input_state) != self.n_qubits or set(self.input_state) - set("01"):
            raise DimensionMismatch(f"input state {self.input_state!r} must be a bit string of length {self.n_qubits}")
        for g in self.gates:
            if any(q >= self.n_qubits or q < 0 for q in g.qubits):
                raise DimensionMismatch(f"gate {g} outside {self.n_qubits}-qubit register")

    def with_noise(self, noise: NoiseModel) -> "CircuitIR":
        return replace(self, noise=noise)

    def __len__(self) -> int:
        return len(self.gates)

    def gate_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for g in self.gates:
            counts[g.name] = counts.get(g.name, 0) + 1
        return counts

    def to_json(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "gates": [{"name": g.name, "qubits": list(g.qubits)} for g in self.gates],
            "observable": self.observable,
            "input": self.input_state,
        }

    @classmethod
    def from_json(cls, data: dict, noise: NoiseModel | None = None) -> "CircuitIR":
        try:
            n = data["n_qubits"]
        except KeyError:
            raise ConfigError("n_qubits", "missing") from None
        if not isinstance(n, int) or n < 1 or n > 10:
            raise ConfigError("n_qubits", f"must be an integer in [1, 10], got {n!r}")
        gates = []
        for i, g in enumerate(data.get("gates", [])):
            try:
                gates.append(Gate(g["name"], tuple(g["qubits"])))
            except KeyError as exc:
                raise ConfigError(f"gates[{i}].{exc.args[0]}", "missing") from None
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"gates[{i}]", str(exc)) from None
        try:
            return cls(n, gates, noise or NoiseModel.none(), data.get("observable"), data.get("input"))
        except DimensionMismatch as exc:
            raise ConfigError("circuit", str(exc)) from None

    @classmethod
    def load(cls, path: str | Path, noise: NoiseModel | None = None) -> "CircuitIR":
        return cls.from_json(json.loads(Path(path).read_text()), noise)


def toffoli_gates(c1: int, c2: int, t: int) -> list[Gate]:
    """Textbook Toffoli over {H, T, Tdg, CNOT}: 6 CNOTs, 7 T-type gates, 2 H."""
    return [
        Gate("H", (t,)),
        Gate("CNOT", (c2, t)),
        Gate("Tdg", (t,)),
        Gate("CNOT", (c1, t)),
        Gate("T", (t,)),
        Gate("CNOT", (c2, t)),
        Gate("Tdg", (t,)),
        Gate("CNOT", (c1, t)),
        Gate("T", (c2,)),
        Gate("T", (t,)),
        Gate("H", (t,)),
        Gate("CNOT", (c1, c2)),
        Gate("T", (c1,)),
        Gate("Tdg", (c2,)),
        Gate("CNOT", (c1, c2)),
    ]


def fredkin_gates(c: int, a: int, b: int, style: str = "three_toffoli") -> list[Gate]:
    """Controlled-SWAP of ``a`` and ``b``.

    ``three_toffoli`` (45 gates): SWAP written as three CNOTs, each promoted to a Toffoli.
    ``cnot_toffoli`` (17 gates): CNOT(b->a) Toffoli(c,a->b) CNOT(b->a).
    """
    if style == "three_toffoli":
        return toffoli_gates(c, a, b) + toffoli_gates(c, b, a) + toffoli_gates(c, a, b)
    if style == "cnot_toffoli":
        return [Gate("CNOT", (b, a))] + toffoli_gates(c, a, b) + [Gate("CNOT", (b, a))]
    raise ValueError(f"unknown Fredkin style {style!r}")


def build_swap_test_circuit(noise: NoiseModel | None = None, fredkin: str = "three_toffoli",
                            second_ghz: bool = False) -> CircuitIR:
    """7-qubit SWAP test of GHZ (qubits 1-3) against |000> (qubits 4-6); ancilla is qubit 0.

    ``second_ghz`` prepares GHZ on both registers (ideal <Z> = 1).
    """
    gates = [Gate("H", (1,)), Gate("CNOT", (1, 2)), Gate("CNOT", (2, 3))]
    if second_ghz:
        gates += [Gate("H", (4,)), Gate("CNOT", (4, 5)), Gate("CNOT", (5, 6))]
    gates.append(Gate("H", (0,)))
    for a, b in ((1, 4), (2, 5), (3, 6)):
        gates += fredkin_gates(0, a, b, fredkin)
    gates.append(Gate("H", (0,)))
    return CircuitIR(7, gates, noise or NoiseModel.none(), "ZIIIIII", "0000000")


SWAP_TEST_GATE_COUNT = 140


def noise_from_config(cfg: dict, where: str = "noise") -> NoiseModel:
    """Build a NoiseModel from a config mapping (TOML/JSON)."""
    if not isinstance(cfg, dict):
        raise ConfigError(where, "must be a table/object")
    kind = cfg.get("kind", "none")
    if kind not in NOISE_KINDS or kind == "probabilistic":
        raise ConfigError(f"{where}.kind", f"unsupported noise kind {kind!r}")
    kw = {}
    for name in ("p", "px", "py", "pz"):
        if name in cfg:
            v = cfg[name]
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ConfigError(f"{where}.{name}", f"must be a number, got {v!r}")
            kw[name] = float(v)
    if "d" in cfg:
        kw["d"] = int(cfg["d"])
    for name in ("noisy_gate_classes", "mitigated_gate_classes"):
        if name in cfg:
            vals = cfg[name]
            if not isinstance(vals, list) or set(vals) - GATE_CLASSES:
                raise ConfigError(f"{where}.{name}", f"must be a list drawn from {sorted(GATE_CLASSES)}")
            kw[name] = frozenset(vals)
    attachment = cfg.get("attachment", "none" if kind == "none" else "local")
    if attachment not in ATTACHMENTS:
        raise ConfigError(f"{where}.attachment", f"must be one of {ATTACHMENTS}")
    try:
        return NoiseModel(kind, attachment=attachment, **kw)
    except (InvalidProbability, ValueError) as exc:
        raise ConfigError(where, str(exc)) from None
