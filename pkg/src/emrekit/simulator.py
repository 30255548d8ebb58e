"""Density-matrix evolution and the per-shot trajectory sampler.

States are kept as tensors of shape ``(2,) * 2n``: the first ``n`` axes index
rows (qubit 0 first), the last ``n`` index columns. A local channel on ``k``
qubits is contracted directly against the touched axes, so a gate never builds
a full-register matrix.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .channels import CircuitIR, noisy_gate_channel
from .errors import DimensionMismatch, InvalidParameter
from .linalg import Channel, pauli_string
from .plans import MitigationPlan

SINGLE_SHOT = "single_shot"
EXACT_TRAJECTORY = "exact_trajectory"
SHOT_MODES = (SINGLE_SHOT, EXACT_TRAJECTORY)

# forward/backward caches are skipped above this many bytes
CACHE_LIMIT_BYTES = 2 * 1024**3


@dataclass
class DensityState:
    n_qubits: int
    matrix: np.ndarray

    @classmethod
    def basis(cls, bits: str) -> "DensityState":
        n = len(bits)
        m = np.zeros((2**n, 2**n), dtype=complex)
        idx = int(bits, 2) if n else 0
        m[idx, idx] = 1.0
        return cls(n, m)

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)))

    @property
    def purity(self) -> float:
        return float(np.real(np.vdot(self.matrix, self.matrix)))

    def tensor(self) -> np.ndarray:
        return self.matrix.reshape((2,) * (2 * self.n_qubits))

    def expectation(self, observable: np.ndarray) -> float:
        return float(np.real(np.vdot(observable, self.matrix)))


def local_tensor(superop: np.ndarray, k: int) -> np.ndarray:
    return np.ascontiguousarray(superop).reshape((2,) * (4 * k))


def apply_local(rho_t: np.ndarray, sop_t: np.ndarray, qubits: tuple[int, ...], n: int) -> np.ndarray:
    """Apply a local superoperator tensor (from :func:`local_tensor`) to a state tensor."""
    k = len(qubits)
    rows = list(qubits)
    cols = [n + q for q in qubits]
    out = np.tensordot(sop_t, rho_t, axes=(list(range(2 * k, 4 * k)), rows + cols))
    return np.moveaxis(out, list(range(2 * k)), rows + cols)


def _adjoint_tensor(ch: Channel, k: int) -> np.ndarray:
    return local_tensor(ch.superop.conj().T, k)


def observable_matrix(label: str) -> np.ndarray:
    return pauli_string(label.upper())


def exact_expectation(circuit: CircuitIR, gate_substitutions: dict[int, Channel] | None = None,
                      ideal: bool = False) -> float:
    """``Tr[O C(rho_0)]`` by full density-matrix evolution.

    ``gate_substitutions`` maps gate indices to local channels replacing the
    (noisy) gate there. ``ideal=True`` drops all noise.
    """
    n = circuit.n_qubits
    subs = gate_substitutions or {}
    rho = DensityState.basis(circuit.input_state).tensor()
    cache: dict = {}
    for i, gate in enumerate(circuit.gates):
        if i in subs:
            ch = subs[i]
            if ch.dim_in != 2**gate.arity or ch.dim_out != ch.dim_in:
                raise DimensionMismatch(f"substitution for gate {i} has the wrong dimension")
            t = local_tensor(ch.superop, gate.arity)
        else:
            key = (gate.name, gate.arity, id(gate.custom))
            if key not in cache:
                ch = gate.channel() if ideal else noisy_gate_channel(gate, circuit.noise)
                cache[key] = local_tensor(ch.superop, gate.arity)
            t = cache[key]
        rho = apply_local(rho, t, gate.qubits, n)
    obs = observable_matrix(circuit.observable).reshape(rho.shape)
    return float(np.real(np.vdot(obs, rho)))


def evolve(circuit: CircuitIR, channels: list[Channel]) -> DensityState:
    """Evolve the input state through one local channel per gate."""
    n = circuit.n_qubits
    rho = DensityState.basis(circuit.input_state).tensor()
    for gate, ch in zip(circuit.gates, channels):
        rho = apply_local(rho, local_tensor(ch.superop, gate.arity), gate.qubits, n)
    return DensityState(n, rho.reshape(2**n, 2**n))


@dataclass
class Trajectory:
    choices: np.ndarray
    sign: int
    weight: float
    outcome: float

    @property
    def value(self) -> float:
        return self.weight * self.sign * self.outcome


def shot_rng(seed: int, shot_index: int) -> np.random.Generator:
    """Independent stream for one shot: Philox keyed by the seed, counter offset by the shot index."""
    return np.random.Generator(np.random.Philox(key=int(seed) % 2**64, counter=int(shot_index) << 64))


class CompiledSampler:
    """Plan compiled into option tables plus cached nominal-path states.

    Option 0 of every gate is its most likely one. Trajectories that deviate
    from the all-nominal path only at a few gates are evaluated from the cached
    forward state before the first deviation to the cached Heisenberg-evolved
    observable after the last one.
    """

    def __init__(self, circuit: CircuitIR, plan: MitigationPlan, cache: bool | None = None):
        if len(plan.per_gate) != len(circuit.gates):
            raise InvalidParameter("plan does not cover every gate")
        self.circuit = circuit
        self.plan = plan
        self.n = n = circuit.n_qubits
        self.depth = depth = len(circuit.gates)
        self.weight = plan.gamma_incl

        self.fwd_ops: list[list[np.ndarray]] = []
        self.adj_ops: list[list[np.ndarray]] = []
        probs, signs = [], []
        kmax = 1
        for gate, gp in zip(circuit.gates, plan.per_gate):
            opts = gp.options(gate, circuit.noise)
            order = sorted(range(len(opts)), key=lambda i: -opts[i][0])
            opts = [opts[i] for i in order]
            self.fwd_ops.append([local_tensor(ch.superop, gate.arity) for _, _, ch in opts])
            self.adj_ops.append([_adjoint_tensor(ch, gate.arity) for _, _, ch in opts])
            probs.append([p for p, _, _ in opts])
            signs.append([s for _, s, _ in opts])
            kmax = max(kmax, len(opts))
        self.n_options = np.array([len(p) for p in probs])
        self.cum = np.full((depth, kmax), 2.0)
        self.signs = np.ones((depth, kmax), dtype=np.int8)
        for i, (p, s) in enumerate(zip(probs, signs)):
            c = np.cumsum(p)
            c[-1] = 1.0
            self.cum[i, :len(c)] = c
            self.signs[i, :len(s)] = s
        # last option fills up to 1, earlier ones are strict thresholds
        self.thresholds = self.cum[:, :-1] if kmax > 1 else np.zeros((depth, 0))

        self.rho0 = DensityState.basis(circuit.input_state).tensor()
        self.obs = observable_matrix(circuit.observable).reshape(self.rho0.shape)
        state_bytes = self.rho0.size * 16
        if cache is None:
            cache = 2 * (depth + 1) * state_bytes <= CACHE_LIMIT_BYTES
        self.cached = cache
        self._memo: dict = {}
        if cache:
            self.forward = [self.rho0]
            for i, gate in enumerate(circuit.gates):
                self.forward.append(apply_local(self.forward[-1], self.fwd_ops[i][0], gate.qubits, n))
            self.backward = [None] * (depth + 1)
            self.backward[depth] = self.obs
            for i in range(depth - 1, -1, -1):
                self.backward[i] = apply_local(self.backward[i + 1], self.adj_ops[i][0],
                                               circuit.gates[i].qubits, n)

    # -- choice sampling

    def choose(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms of shape ``(shots, depth)`` to option indices."""
        if self.thresholds.shape[1] == 0:
            return np.zeros(u.shape, dtype=np.int64)
        return (u[..., None] >= self.thresholds[None]).sum(axis=-1)

    def sign_of(self, choices: np.ndarray) -> np.ndarray:
        rows = np.arange(self.depth)
        return np.prod(self.signs[rows, choices], axis=-1, dtype=np.int64)

    # -- values

    def trajectory_value(self, choices: np.ndarray) -> float:
        """Exact expectation of the sampled circuit."""
        dev = np.flatnonzero(choices)
        key = (dev.tobytes(), choices[dev].tobytes())
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        gates = self.circuit.gates
        if self.cached:
            if dev.size == 0:
                val = float(np.real(np.vdot(self.obs, self.forward[self.depth])))
            else:
                first, last = int(dev[0]), int(dev[-1])
                rho = self.forward[first]
                for i in range(first, last + 1):
                    rho = apply_local(rho, self.fwd_ops[i][choices[i]], gates[i].qubits, self.n)
                val = float(np.real(np.vdot(self.backward[last + 1], rho)))
        else:
            rho = self.rho0
            for i in range(self.depth):
                rho = apply_local(rho, self.fwd_ops[i][choices[i]], gates[i].qubits, self.n)
            val = float(np.real(np.vdot(self.obs, rho)))
        self._memo[key] = val
        return val

    def nominal_value(self) -> float:
        return self.trajectory_value(np.zeros(self.depth, dtype=np.int64))

    # -- shots

    def uniforms(self, seed: int, start: int, stop: int) -> np.ndarray:
        out = np.empty((stop - start, self.depth + 1))
        for j, idx in enumerate(range(start, stop)):
            out[j] = shot_rng(seed, idx).random(self.depth + 1)
        return out

    def run(self, seed: int, start: int, stop: int, mode: str = SINGLE_SHOT,
            record: bool = False) -> tuple[np.ndarray, list[Trajectory] | None]:
        """Per-shot values ``weight * sign * outcome`` for shots ``start .. stop-1``."""
        if mode not in SHOT_MODES:
            raise InvalidParameter(f"unknown shot mode {mode!r}")
        u = self.uniforms(seed, start, stop)
        choices = self.choose(u[:, :-1])
        signs = self.sign_of(choices)
        values = np.empty(stop - start)
        trajs = [] if record else None
        for j in range(stop - start):
            v = self.trajectory_value(choices[j])
            if mode == SINGLE_SHOT:
                v = 1.0 if u[j, -1] < (1.0 + v) / 2.0 else -1.0
            values[j] = self.weight * signs[j] * v
            if record:
                trajs.append(Trajectory(choices[j].copy(), int(signs[j]), self.weight, v))
        return values, trajs

    def sample(self, rng: np.random.Generator, mode: str = SINGLE_SHOT) -> Trajectory:
        u = rng.random(self.depth + 1)
        ch = self.choose(u[None, :-1])[0]
        v = self.trajectory_value(ch)
        if mode == SINGLE_SHOT:
            v = 1.0 if u[-1] < (1.0 + v) / 2.0 else -1.0
        return Trajectory(ch, int(self.sign_of(ch[None])[0]), self.weight, v)

    # -- deterministic expansion

    def signed_sum(self, max_terms: int = 1_000_000) -> float:
        """``sum over all option combinations of weight * sign * prob * value``."""
        total = 1
        for k in self.n_options:
            total *= int(k)
        if total > max_terms:
            raise InvalidParameter(f"{total} term combinations exceed the enumeration limit")
        probs = np.diff(np.concatenate([np.zeros((self.depth, 1)), np.minimum(self.cum, 1.0)], axis=1), axis=1)
        acc = 0.0
        for combo in itertools.product(*[range(int(k)) for k in self.n_options]):
            ch = np.array(combo, dtype=np.int64)
            p = float(np.prod(probs[np.arange(self.depth), ch]))
            acc += p * int(self.sign_of(ch[None])[0]) * self.trajectory_value(ch)
        return self.weight * acc


@dataclass
class ShotBatch:
    values: np.ndarray
    trajectories: list[Trajectory] | None = None

    @property
    def shots(self) -> int:
        return int(self.values.size)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def stderr(self) -> float:
        if self.values.size < 2:
            return float("nan")
        return float(np.std(self.values, ddof=1) / np.sqrt(self.values.size))


def sample_shot(circuit: CircuitIR, plan: MitigationPlan, rng: np.random.Generator,
                mode: str = SINGLE_SHOT) -> Trajectory:
    return CompiledSampler(circuit, plan, cache=False).sample(rng, mode)


def run_shots(circuit: CircuitIR, plan: MitigationPlan, shots: int, seed: int,
              mode: str = SINGLE_SHOT, record: bool = False, threads: int = 1,
              sampler: CompiledSampler | None = None) -> ShotBatch:
    """Run ``shots`` trajectories; shot ``i`` always draws from ``shot_rng(seed, i)``.

    Results do not depend on ``threads``: shots are split into contiguous chunks
    and concatenated in order.
    """
    if shots < 1:
        raise InvalidParameter("shots must be >= 1")
    sampler = sampler or CompiledSampler(circuit, plan)
    if threads <= 1 or shots < 2 * threads:
        values, trajs = sampler.run(seed, 0, shots, mode, record)
        return ShotBatch(values, trajs)
    from concurrent.futures import ThreadPoolExecutor
    bounds = np.linspace(0, shots, threads + 1).astype(int)
    with ThreadPoolExecutor(threads) as pool:
        parts = list(pool.map(lambda ab: sampler.run(seed, ab[0], ab[1], mode, record),
                              zip(bounds[:-1], bounds[1:])))
    values = np.concatenate([p[0] for p in parts])
    trajs = [t for p in parts for t in p[1]] if record else None
    return ShotBatch(values, trajs)


def signed_enumeration(circuit: CircuitIR, plan: MitigationPlan, max_terms: int = 1_000_000) -> float:
    """Deterministic signed sum over every combination of decomposition terms."""
    return CompiledSampler(circuit, plan).signed_sum(max_terms)
