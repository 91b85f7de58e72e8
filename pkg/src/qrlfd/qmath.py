"""Dense complex linear algebra and quantum-state primitives.

Matrices are plain ``numpy`` complex arrays. Every Hamiltonian in this package
is Hermitian and at most a few tens of levels, so exponentials are taken through
a Hermitian eigendecomposition, which is exact for piecewise-constant drive.
Units: hbar = 1, angular frequencies in rad/ns, times in ns.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import prod

import numpy as np

HERMITIAN_ATOL = 1e-10


class DimensionError(ValueError):
    """Operator or state shapes do not fit together."""


class ContractViolation(ValueError):
    """An input breaks a documented precondition."""


class DegenerateStateError(ValueError):
    """A state vector has (numerically) zero norm."""


SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
# |0> is the ground state, so sigma_minus = |0><1|
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.T.copy()


def mhz(f: float) -> float:
    """Convert a frequency in MHz to angular frequency in rad/ns."""
    return 2 * np.pi * f * 1e-3


def kron(a: np.ndarray, b: np.ndarray, *more: np.ndarray) -> np.ndarray:
    """Kronecker product, left factor is the most significant index."""
    out = np.asarray(a)
    if out.size == 0:
        raise DimensionError("kron of an empty matrix")
    for m in (b, *more):
        m = np.asarray(m)
        if m.size == 0:
            raise DimensionError("kron of an empty matrix")
        out = np.kron(out, m)
    return out


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def destroy(n: int) -> np.ndarray:
    """Truncated annihilation operator on ``n`` levels."""
    if n < 2:
        raise DimensionError(f"ladder operator needs n >= 2, got {n}")
    return np.diag(np.sqrt(np.arange(1, n)), k=1).astype(complex)


def number(n: int) -> np.ndarray:
    return np.diag(np.arange(n)).astype(complex)


def is_hermitian(h: np.ndarray, atol: float = HERMITIAN_ATOL) -> bool:
    h = np.asarray(h)
    return h.ndim >= 2 and h.shape[-1] == h.shape[-2] and np.allclose(h, dagger(h), rtol=0, atol=atol)


def expm_hermitian(h: np.ndarray, dt: float) -> np.ndarray:
    """exp(-i h dt) for a Hermitian ``h`` or a stack of them (no checks)."""
    w, v = np.linalg.eigh(h)
    phases = np.exp(-1j * w * dt)
    return (v * phases[..., None, :]) @ dagger(v)


def propagator(h: np.ndarray, dt: float) -> np.ndarray:
    """Unitary exp(-i h dt) of a constant Hermitian Hamiltonian."""
    h = np.asarray(h, dtype=complex)
    if not is_hermitian(h):
        raise ContractViolation("propagator requires a Hermitian generator")
    return expm_hermitian(h, dt)


@dataclass(frozen=True)
class QuantumState:
    """Pure state on a tensor product of truncated subsystems.

    ``truncated_weight`` records probability lost when a target with infinite
    Fock support was cut down to ``dims`` and renormalized.
    """

    dims: tuple[int, ...]
    amplitudes: np.ndarray
    truncated_weight: float = field(default=0.0, compare=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if prod(dims) != amps.size:
            raise DimensionError(f"{amps.size} amplitudes do not fit dims {dims}")
        amps.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    @classmethod
    def basis(cls, dims, *levels: int) -> "QuantumState":
        """Product basis state |levels[0], levels[1], ...>."""
        dims = tuple(dims)
        if len(levels) != len(dims):
            raise DimensionError("one level index per subsystem is required")
        amps = np.zeros(prod(dims), dtype=complex)
        amps[np.ravel_multi_index(levels, dims)] = 1.0
        return cls(dims, amps)


def normalize(s: QuantumState) -> QuantumState:
    n = s.norm()
    if n <= 1e-14:
        raise DegenerateStateError("cannot normalize a zero vector")
    return QuantumState(s.dims, s.amplitudes / n, s.truncated_weight)


def embed(op: np.ndarray, index: int, dims) -> np.ndarray:
    """Lift a single-subsystem operator to the full tensor space."""
    factors = [np.eye(d, dtype=complex) for d in dims]
    if op.shape != (dims[index], dims[index]):
        raise DimensionError(f"operator shape {op.shape} does not match subsystem {index}")
    factors[index] = op
    return kron(*factors) if len(factors) > 1 else factors[0]


def partial_trace_keep(s: QuantumState, keep: int) -> np.ndarray:
    """Reduced density matrix of subsystem ``keep``."""
    psi = s.amplitudes.reshape(s.dims)
    psi = np.moveaxis(psi, keep, 0).reshape(s.dims[keep], -1)
    return psi @ psi.conj().T
