"""Dense linear algebra and channel representations.

Conventions used throughout the package:

* Qubit 0 is the most significant tensor factor (leftmost in a Kronecker product).
* Superoperators act on row-major vectorised matrices, ``vec(rho)[i*d + j] = rho[i, j]``,
  so a Kraus operator ``K`` contributes ``kron(K, K.conj())``.
* Choi matrices are ``J = sum_ij |i><j| (x) E(|i><j|)`` with the *unnormalised*
  maximally entangled state, input factor first. ``Tr J = dim_in`` for trace
  preserving maps.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache, reduce
from typing import Iterable, Sequence

import numpy as np

from .errors import CompletenessViolation, DimensionMismatch

TOL = 1e-9
"""Global tolerance for Hermiticity / positivity / trace checks."""


def set_tolerance(value: float) -> None:
    global TOL
    TOL = float(value)


def _tol(atol):
    return TOL if atol is None else atol


I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = {"I": I2, "X": X, "Y": Y, "Z": Z}


def kron(*matrices: np.ndarray) -> np.ndarray:
    """Kronecker product of any number of matrices (left factor is most significant)."""
    if not matrices:
        return np.eye(1, dtype=complex)
    return reduce(np.kron, (np.asarray(m) for m in matrices))


def pauli_string(label: str) -> np.ndarray:
    return kron(*(PAULIS[c] for c in label.upper()))


@lru_cache(maxsize=None)
def pauli_labels(n: int) -> tuple[str, ...]:
    """All ``4**n`` Pauli labels in lexicographic I, X, Y, Z order."""
    return tuple("".join(t) for t in itertools.product("IXYZ", repeat=n))


@lru_cache(maxsize=None)
def pauli_commutation_matrix(n: int) -> np.ndarray:
    """``C[j, i] = +1`` if Pauli strings j and i commute, else ``-1``."""
    labels = pauli_labels(n)

    def anti(a, b):
        return sum(1 for x, y in zip(a, b) if x != "I" and y != "I" and x != y) % 2

    m = np.array([[(-1.0) ** anti(a, b) for b in labels] for a in labels])
    m.setflags(write=False)
    return m


def num_qubits_for_dim(d: int) -> int:
    n = int(round(np.log2(d)))
    if 2**n != d:
        raise DimensionMismatch(f"dimension {d} is not a power of two")
    return n


# ---------------------------------------------------------------- predicates

def is_hermitian(m: np.ndarray, atol: float | None = None) -> bool:
    m = np.asarray(m)
    return m.shape[0] == m.shape[1] and np.max(np.abs(m - m.conj().T), initial=0.0) <= _tol(atol)


def is_unitary(m: np.ndarray, atol: float = 1e-12) -> bool:
    m = np.asarray(m)
    if m.shape[0] != m.shape[1]:
        return False
    return np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))) <= atol


def min_eigenvalue(m: np.ndarray) -> float:
    h = (np.asarray(m) + np.asarray(m).conj().T) / 2
    return float(np.linalg.eigvalsh(h)[0])


def is_psd(m: np.ndarray, atol: float | None = None) -> bool:
    return is_hermitian(m, atol) and min_eigenvalue(m) >= -_tol(atol)


def partial_trace(m: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Partial trace of ``m`` over all subsystems not listed in ``keep``."""
    dims = list(dims)
    n = len(dims)
    t = np.asarray(m).reshape(dims + dims)
    traced = [i for i in range(n) if i not in keep]
    # trace highest index first so axis numbers stay valid
    for k, i in enumerate(sorted(traced, reverse=True)):
        cur = n - k
        t = np.trace(t, axis1=i, axis2=i + cur)
    d = int(np.prod([dims[i] for i in keep])) if keep else 1
    return t.reshape(d, d)


# ---------------------------------------------------------------- conversions

def _check_kraus(kraus: Sequence[np.ndarray]) -> tuple[int, int]:
    if len(kraus) == 0:
        raise DimensionMismatch("empty Kraus list")
    shape = np.asarray(kraus[0]).shape
    for k in kraus:
        if np.asarray(k).shape != shape:
            raise DimensionMismatch("Kraus operators must share one shape")
    return shape[1], shape[0]


def kraus_to_superop(kraus: Sequence[np.ndarray]) -> np.ndarray:
    _check_kraus(kraus)
    return sum(np.kron(k, np.conj(k)) for k in map(np.asarray, kraus))


def superop_to_choi(s: np.ndarray, dim_in: int, dim_out: int) -> np.ndarray:
    # S[(a,b),(i,j)] -> J[(i,a),(j,b)]
    t = np.asarray(s).reshape(dim_out, dim_out, dim_in, dim_in)
    return t.transpose(2, 0, 3, 1).reshape(dim_in * dim_out, dim_in * dim_out)


def choi_to_superop(j: np.ndarray, dim_in: int, dim_out: int) -> np.ndarray:
    t = np.asarray(j).reshape(dim_in, dim_out, dim_in, dim_out)
    return t.transpose(1, 3, 0, 2).reshape(dim_out * dim_out, dim_in * dim_in)


def choi_to_kraus(j: np.ndarray, dim_in: int, dim_out: int, atol: float = 1e-12) -> list[np.ndarray]:
    """Canonical Kraus operators from the eigendecomposition of a PSD Choi matrix."""
    w, v = np.linalg.eigh((j + j.conj().T) / 2)
    out = []
    for lam, vec in zip(w[::-1], v.T[::-1]):
        if lam <= atol:
            continue
        out.append(np.sqrt(lam) * vec.reshape(dim_in, dim_out).T)
    return out


@dataclass(frozen=True)
class ChoiMatrix:
    dim_in: int
    dim_out: int
    matrix: np.ndarray

    def __post_init__(self):
        n = self.dim_in * self.dim_out
        if self.matrix.shape != (n, n):
            raise DimensionMismatch(f"Choi matrix must be {n}x{n}, got {self.matrix.shape}")

    def is_hermitian(self, atol=None) -> bool:
        return is_hermitian(self.matrix, atol)

    def is_cp(self, atol=None) -> bool:
        return min_eigenvalue(self.matrix) >= -_tol(atol)

    def is_tp(self, atol=None) -> bool:
        reduced = partial_trace(self.matrix, [self.dim_in, self.dim_out], keep=[0])
        return np.max(np.abs(reduced - np.eye(self.dim_in))) <= _tol(atol)

    def is_cptp(self, atol=None) -> bool:
        return self.is_hermitian(atol) and self.is_cp(atol) and self.is_tp(atol)

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)


def max_entangled(d: int) -> np.ndarray:
    """Unnormalised ``Phi+_d = sum_ij |ii><jj|`` (trace ``d``)."""
    v = np.eye(d, dtype=complex).reshape(d * d)
    return np.outer(v, v)


def kraus_to_choi(kraus: Sequence[np.ndarray], dim_in: int, atol: float | None = None) -> ChoiMatrix:
    d_in, d_out = _check_kraus(kraus)
    if d_in != dim_in:
        raise DimensionMismatch(f"Kraus input dimension {d_in} != dim_in {dim_in}")
    comp = sum(np.asarray(k).conj().T @ np.asarray(k) for k in kraus)
    if np.max(np.abs(comp - np.eye(dim_in))) > _tol(atol):
        raise CompletenessViolation("sum_i K_i^dag K_i deviates from the identity")
    phi = max_entangled(dim_in)
    j = np.zeros((dim_in * d_out, dim_in * d_out), dtype=complex)
    for k in kraus:
        a = np.kron(np.eye(dim_in), np.asarray(k))
        j += a @ phi @ a.conj().T
    return ChoiMatrix(dim_in, d_out, j)


def choi_apply(choi: ChoiMatrix, rho: np.ndarray) -> np.ndarray:
    """``E(rho) = Tr_in[(rho^T (x) I) J]``."""
    rho = np.asarray(rho)
    if rho.shape != (choi.dim_in, choi.dim_in):
        raise DimensionMismatch(f"state is {rho.shape}, channel input dimension is {choi.dim_in}")
    m = np.kron(rho.T, np.eye(choi.dim_out)) @ choi.matrix
    return partial_trace(m, [choi.dim_in, choi.dim_out], keep=[1])


def apply_kraus(kraus: Iterable[np.ndarray], rho: np.ndarray) -> np.ndarray:
    return sum(k @ rho @ k.conj().T for k in map(np.asarray, kraus))


def ptm_from_superop(s: np.ndarray, n: int) -> np.ndarray:
    """``R_ij = Tr[P_i E(P_j)] / 2**n`` over n-qubit Pauli strings."""
    d = 2**n
    basis = np.array([pauli_string(lab) for lab in pauli_labels(n)])  # (4^n, d, d)
    vecs = basis.reshape(len(basis), d * d)
    images = vecs @ np.asarray(s).T  # row j = vec(E(P_j))
    # Tr[P_i A] = sum_ab P_i[b,a] A[a,b] = vec(P_i^T) . vec(A)
    r = np.conj(vecs) @ images.T  # P_i Hermitian so conj(P_i) = P_i^T
    return np.real_if_close(r / d, tol=1e6).real


def ptm_of_channel(kraus: Sequence[np.ndarray]) -> np.ndarray:
    d_in, d_out = _check_kraus(kraus)
    if d_in != d_out:
        raise DimensionMismatch("PTM requires equal input and output dimension")
    return ptm_from_superop(kraus_to_superop(kraus), num_qubits_for_dim(d_in))


# ---------------------------------------------------------------- Channel

class Channel:
    """A linear map on ``d x d`` matrices stored as a row-major superoperator.

    Kraus, Choi and PTM views are derived on demand. Signed combinations
    (``a * ch1 - b * ch2``) produce general Hermiticity-preserving maps, which
    is what decompositions need before their pieces are checked for CPTP-ness.
    """

    __slots__ = ("superop", "dim_in", "dim_out", "label", "_kraus")

    def __init__(self, superop: np.ndarray, dim_in: int, dim_out: int | None = None,
                 label: str = "", kraus: Sequence[np.ndarray] | None = None):
        dim_out = dim_in if dim_out is None else dim_out
        superop = np.asarray(superop, dtype=complex)
        if superop.shape != (dim_out**2, dim_in**2):
            raise DimensionMismatch(f"superoperator shape {superop.shape} does not match dims")
        self.superop = superop
        self.dim_in = dim_in
        self.dim_out = dim_out
        self.label = label
        self._kraus = None if kraus is None else tuple(np.asarray(k, dtype=complex) for k in kraus)

    # constructors
    @classmethod
    def from_kraus(cls, kraus: Sequence[np.ndarray], label: str = "") -> "Channel":
        d_in, d_out = _check_kraus(kraus)
        return cls(kraus_to_superop(kraus), d_in, d_out, label, kraus)

    @classmethod
    def from_unitary(cls, u: np.ndarray, label: str = "") -> "Channel":
        u = np.asarray(u, dtype=complex)
        return cls.from_kraus([u], label)

    @classmethod
    def identity(cls, d: int) -> "Channel":
        return cls.from_kraus([np.eye(d)], "id")

    @classmethod
    def from_choi(cls, j: np.ndarray, dim_in: int, dim_out: int | None = None, label: str = "") -> "Channel":
        dim_out = dim_in if dim_out is None else dim_out
        return cls(choi_to_superop(j, dim_in, dim_out), dim_in, dim_out, label)

    @classmethod
    def pauli_channel(cls, probs: dict[str, float], label: str = "") -> "Channel":
        """``rho -> sum_P probs[P] P rho P`` over Pauli strings of equal length."""
        kraus = [np.sqrt(w) * pauli_string(lab) for lab, w in probs.items() if w > 0]
        if not kraus:
            n = len(next(iter(probs)))
            kraus = [0.0 * np.eye(2**n)]
        return cls.from_kraus(kraus, label)

    # views
    @property
    def kraus(self) -> tuple[np.ndarray, ...]:
        if self._kraus is None:
            self._kraus = tuple(choi_to_kraus(self.choi.matrix, self.dim_in, self.dim_out))
        return self._kraus

    @property
    def choi(self) -> ChoiMatrix:
        return ChoiMatrix(self.dim_in, self.dim_out, superop_to_choi(self.superop, self.dim_in, self.dim_out))

    @property
    def n_qubits(self) -> int:
        return num_qubits_for_dim(self.dim_in)

    def ptm(self) -> np.ndarray:
        return ptm_from_superop(self.superop, self.n_qubits)

    def is_cptp(self, atol=None) -> bool:
        return self.choi.is_cptp(atol)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        rho = np.asarray(rho)
        if rho.shape != (self.dim_in, self.dim_in):
            raise DimensionMismatch(f"state is {rho.shape}, channel input dimension is {self.dim_in}")
        return (self.superop @ rho.reshape(-1)).reshape(self.dim_out, self.dim_out)

    def adjoint(self) -> "Channel":
        return Channel(self.superop.conj().T, self.dim_out, self.dim_in, f"({self.label})^dag")

    # algebra
    def __matmul__(self, other: "Channel") -> "Channel":
        """``self @ other`` applies ``other`` first."""
        if other.dim_out != self.dim_in:
            raise DimensionMismatch("composition dimension mismatch")
        kraus = None
        if self._kraus is not None and other._kraus is not None and len(self._kraus) * len(other._kraus) <= 64:
            kraus = [a @ b for a in self._kraus for b in other._kraus]
        label = f"{self.label}.{other.label}" if self.label and other.label else self.label or other.label
        return Channel(self.superop @ other.superop, other.dim_in, self.dim_out, label, kraus)

    def tensor(self, other: "Channel") -> "Channel":
        a, b = self, other
        sa = a.superop.reshape(a.dim_out, a.dim_out, a.dim_in, a.dim_in)
        sb = b.superop.reshape(b.dim_out, b.dim_out, b.dim_in, b.dim_in)
        s = np.einsum("abij,cdkl->acbdikjl", sa, sb)
        din, dout = a.dim_in * b.dim_in, a.dim_out * b.dim_out
        kraus = None
        if a._kraus is not None and b._kraus is not None and len(a._kraus) * len(b._kraus) <= 256:
            kraus = [np.kron(x, y) for x in a._kraus for y in b._kraus]
        return Channel(s.reshape(dout**2, din**2), din, dout, f"{a.label}(x){b.label}", kraus)

    def __add__(self, other: "Channel") -> "Channel":
        return Channel(self.superop + other.superop, self.dim_in, self.dim_out, "")

    def __sub__(self, other: "Channel") -> "Channel":
        return Channel(self.superop - other.superop, self.dim_in, self.dim_out, "")

    def __mul__(self, scalar: float) -> "Channel":
        return Channel(scalar * self.superop, self.dim_in, self.dim_out, "")

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"Channel({self.label or '?'}, dim={self.dim_in}->{self.dim_out})"


def tensor_all(channels: Sequence[Channel]) -> Channel:
    return reduce(lambda a, b: a.tensor(b), channels)


# ---------------------------------------------------------------- random objects

def haar_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    ph = np.diag(r) / np.abs(np.diag(r))
    return q * ph


def random_cptp(d: int, rng: np.random.Generator, env_dim: int | None = None) -> Channel:
    """Random channel from a Haar-random Stinespring isometry with environment ``env_dim``."""
    env_dim = d if env_dim is None else env_dim
    u = haar_unitary(d * env_dim, rng)
    iso = u[:, :d]  # columns of a unitary form an isometry d -> d*env
    kraus = [iso.reshape(d, env_dim, d)[:, e, :] for e in range(env_dim)]
    return Channel.from_kraus(kraus, "W")


def random_density_matrix(d: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    rank = d if rank is None else rank
    g = rng.standard_normal((d, rank)) + 1j * rng.standard_normal((d, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho)
