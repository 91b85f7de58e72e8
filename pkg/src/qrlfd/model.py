"""Physical systems, target states and Wigner grids.

Two control problems are provided:

* two qubits with a tunable XY coupler (drives on sigma_x of each qubit and the
  coupler strength as a third channel), and
* a transmon (``n_q`` levels) dispersively coupled to a cavity (``n_c`` levels)
  with Kerr terms, driven by in-phase/quadrature tones on both modes.

The tensor ordering for the bosonic system is qubit first, cavity second.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import factorial, lgamma

import numpy as np

from .qmath import (
    SIGMA_MINUS,
    SIGMA_PLUS,
    SIGMA_X,
    SIGMA_Z,
    DimensionError,
    QuantumState,
    dagger,
    destroy,
    embed,
    is_hermitian,
    kron,
    mhz,
    normalize,
)


class TruncationError(DimensionError):
    """Target support does not fit inside the truncated Hilbert space."""


@dataclass(frozen=True)
class TwoQubitParams:
    # detuned drift breaks the X(x)X symmetry that the three controls share
    omega1: float = mhz(10.0)
    omega2: float = mhz(20.0)
    g_max: float = mhz(20.0)
    drive_max: float = mhz(50.0)

    def __post_init__(self):
        if self.g_max <= 0 or self.drive_max <= 0:
            raise ValueError("g_max and drive_max must be positive")


@dataclass(frozen=True)
class KerrParams:
    d_omega_c: float = 0.0
    d_omega_q: float = 0.0
    chi: float = mhz(-2.2)
    e_c: float = mhz(200.0)
    k_self: float = mhz(-0.004)
    chi_prime: float = 0.0
    n_q: int = 3
    n_c: int = 7
    cavity_drive_max: float = mhz(10.0)
    qubit_drive_max: float = mhz(25.0)

    def __post_init__(self):
        if self.n_q < 2 or self.n_c < 2:
            raise ValueError("truncations must be at least 2")
        if self.cavity_drive_max <= 0 or self.qubit_drive_max <= 0:
            raise ValueError("drive bounds must be positive")


@dataclass(frozen=True)
class SystemSpec:
    """Drift plus linearly controlled Hamiltonians, H = H0 + sum_k u_k H_k.

    The drift is kept as named terms so that a model bias can rescale the
    physical coefficients listed in ``biased_terms`` without touching the
    rest (e.g. rotating-frame detunings).
    """

    dims: tuple[int, ...]
    drift_terms: tuple[tuple[str, np.ndarray], ...]
    controls: tuple[tuple[str, np.ndarray], ...]
    amp_bounds: tuple[tuple[float, float], ...]
    dt: float
    n_segments: int
    biased_terms: tuple[str, ...] = ()
    h0: np.ndarray = field(init=False, repr=False, compare=False)
    control_stack: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        dim = int(np.prod(self.dims))
        if self.n_segments < 1:
            raise ValueError("n_segments must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if len(self.amp_bounds) != len(self.controls):
            raise ValueError("one amplitude bound per control channel")
        h0 = np.zeros((dim, dim), dtype=complex)
        for _, m in self.drift_terms:
            if m.shape != (dim, dim):
                raise DimensionError("drift term does not match system dimension")
            h0 = h0 + m
        for _, m in self.controls:
            if m.shape != (dim, dim):
                raise DimensionError("control Hamiltonian does not match system dimension")
        stack = np.array([m for _, m in self.controls], dtype=complex).reshape(-1, dim, dim)
        object.__setattr__(self, "h0", h0)
        object.__setattr__(self, "control_stack", stack)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    @property
    def labels(self) -> list[str]:
        return [label for label, _ in self.controls]

    @property
    def action_dim(self) -> int:
        return self.n_controls * self.n_segments

    @property
    def duration(self) -> float:
        return self.dt * self.n_segments

    def with_segments(self, n_segments: int, dt: float | None = None) -> "SystemSpec":
        return replace(self, n_segments=n_segments, dt=self.dt if dt is None else dt)


def build_two_qubit_system(p: TwoQubitParams = TwoQubitParams(), n_segments: int = 50,
                           dt: float = 2.0) -> SystemSpec:
    dims = (2, 2)
    coupler = kron(SIGMA_MINUS, SIGMA_PLUS) + kron(SIGMA_PLUS, SIGMA_MINUS)
    drift = (
        ("omega1", 0.5 * p.omega1 * embed(SIGMA_Z, 0, dims)),
        ("omega2", 0.5 * p.omega2 * embed(SIGMA_Z, 1, dims)),
    )
    controls = (
        ("x1", embed(SIGMA_X, 0, dims)),
        ("x2", embed(SIGMA_X, 1, dims)),
        ("g", coupler),
    )
    bounds = ((-p.drive_max, p.drive_max), (-p.drive_max, p.drive_max), (0.0, p.g_max))
    return SystemSpec(dims, drift, controls, bounds, dt, n_segments)


def build_kerr_system(p: KerrParams = KerrParams(), n_segments: int = 275,
                      dt: float = 8.0) -> SystemSpec:
    dims = (p.n_q, p.n_c)
    b = embed(destroy(p.n_q), 0, dims)
    a = embed(destroy(p.n_c), 1, dims)
    ad, bd = dagger(a), dagger(b)
    na, nb = ad @ a, bd @ b
    drift = (
        ("d_omega_c", p.d_omega_c * na),
        ("d_omega_q", p.d_omega_q * nb),
        ("chi", p.chi * na @ nb),
        ("e_c", -0.5 * p.e_c * bd @ bd @ b @ b),
        ("k_self", 0.5 * p.k_self * ad @ ad @ a @ a),
        ("chi_prime", 0.5 * p.chi_prime * ad @ ad @ a @ a @ nb),
    )
    controls = (
        ("cavity_i", a + ad),
        ("cavity_q", 1j * (a - ad)),
        ("qubit_i", b + bd),
        ("qubit_q", 1j * (b - bd)),
    )
    cm, qm = p.cavity_drive_max, p.qubit_drive_max
    bounds = ((-cm, cm), (-cm, cm), (-qm, qm), (-qm, qm))
    return SystemSpec(dims, drift, controls, bounds, dt, n_segments,
                      biased_terms=("chi", "e_c", "k_self", "chi_prime"))


def check_hermitian(spec: SystemSpec, atol: float = 1e-12) -> bool:
    mats = [spec.h0] + [m for _, m in spec.controls]
    return all(is_hermitian(m, atol) for m in mats)


# --- target states -----------------------------------------------------------

def coherent_amplitudes(alpha: complex, n: int) -> np.ndarray:
    """Fock amplitudes of |alpha> for levels 0..n-1 (untruncated coefficients)."""
    k = np.arange(n)
    out = np.zeros(n, dtype=complex)
    if alpha == 0:
        out[0] = 1.0
        return out
    # log domain so large n neither overflows k! nor alpha**k
    log_fact = np.array([lgamma(j + 1.0) for j in k])
    log_mag = -0.5 * abs(alpha) ** 2 + k * np.log(abs(alpha)) - 0.5 * log_fact
    return np.exp(log_mag + 1j * k * np.angle(alpha))


def hermite_functions(n: int, x: np.ndarray) -> np.ndarray:
    """Harmonic-oscillator eigenfunctions psi_0..psi_{n-1} on ``x`` (stable recurrence)."""
    out = np.empty((n, x.size))
    out[0] = np.pi ** -0.25 * np.exp(-0.5 * x ** 2)
    if n > 1:
        out[1] = np.sqrt(2.0) * x * out[0]
    for k in range(2, n):
        out[k] = np.sqrt(2.0 / k) * x * out[k - 1] - np.sqrt((k - 1) / k) * out[k - 2]
    return out


def gkp_fock_amplitudes(delta: float, n: int, n_aux: int = 160, n_peaks: int = 8) -> np.ndarray:
    """Finite-energy square GKP |0_L> in the Fock basis (length ``n_aux``).

    Peaks are q-squeezed Gaussians of width ``delta`` centred on 2 s sqrt(pi)
    (q = (a + a^dag)/sqrt 2), summed, projected onto Fock states by quadrature,
    damped by exp(-delta^2 n) and normalized.
    """
    spacing = 2 * np.sqrt(np.pi)
    q = np.linspace(-(n_peaks + 1.5) * spacing, (n_peaks + 1.5) * spacing, 8001)
    psi = np.zeros_like(q)
    for s in range(-n_peaks, n_peaks + 1):
        psi += np.exp(-((q - s * spacing) ** 2) / (2 * delta ** 2))
    basis = hermite_functions(n_aux, q)
    amps = basis @ psi * (q[1] - q[0])
    amps = amps * np.exp(-delta ** 2 * np.arange(n_aux))
    amps = amps / np.linalg.norm(amps)
    return amps.astype(complex)


def _cavity_target(cavity_amps: np.ndarray, dims, qubit_level: int = 0) -> QuantumState:
    """Place a cavity state (possibly longer than the truncation) on qubit|level>."""
    n_c = dims[-1]
    kept = cavity_amps[:n_c]
    lost = float(np.sum(np.abs(cavity_amps[n_c:]) ** 2)) / float(np.sum(np.abs(cavity_amps) ** 2))
    if len(dims) == 1:
        full = kept
    else:
        qubit = np.zeros(dims[0], dtype=complex)
        qubit[qubit_level] = 1.0
        full = np.kron(qubit, kept)
    return normalize(QuantumState(tuple(dims), full, lost))


def make_target(kind: str, dims, alpha: float = 2.0, delta: float = 0.3, n: int = 0) -> QuantumState:
    """Normalized target state; ``kind`` in {bell, binomial, cat, gkp, fock}.

    Bosonic targets live on the last subsystem with any leading qubit in its
    ground state. Cat and GKP tails beyond the truncation are dropped and the
    lost weight is kept on ``truncated_weight``.
    """
    dims = tuple(dims)
    if kind == "bell":
        if dims != (2, 2):
            raise TruncationError("bell target needs dims (2, 2)")
        return normalize(QuantumState(dims, np.array([1, 0, 0, 1], dtype=complex)))
    n_c = dims[-1]
    if kind == "binomial":
        if n_c < 5:
            raise TruncationError("binomial (|0>+|4>) needs at least 5 cavity levels")
        amps = np.zeros(n_c, dtype=complex)
        amps[[0, 4]] = 1.0
        return _cavity_target(amps, dims)
    if kind == "fock":
        if n >= n_c:
            raise TruncationError(f"Fock |{n}> needs at least {n + 1} cavity levels")
        amps = np.zeros(n_c, dtype=complex)
        amps[n] = 1.0
        return _cavity_target(amps, dims)
    if kind == "cat":
        n_full = max(n_c, int(abs(alpha) ** 2 + 12 * abs(alpha) + 40))
        amps = coherent_amplitudes(alpha, n_full) + coherent_amplitudes(-alpha, n_full)
        return _cavity_target(amps, dims)
    if kind == "gkp":
        amps = gkp_fock_amplitudes(delta, max(n_c, 160))
        return _cavity_target(amps, dims)
    raise ValueError(f"unknown target kind {kind!r}")


def mean_photon_number(s: QuantumState) -> float:
    n_c = s.dims[-1]
    probs = np.abs(s.amplitudes.reshape(-1, n_c)) ** 2
    return float(probs.sum(axis=0) @ np.arange(n_c))


# --- Wigner function ---------------------------------------------------------

def _laguerre_table(m_max: int, x: np.ndarray) -> dict:
    """Generalized Laguerre L_n^(k)(x) for all n + k <= m_max via recurrences."""
    table = {}
    for k in range(m_max + 1):
        l_prev = np.ones_like(x)
        table[(0, k)] = l_prev
        if m_max - k >= 1:
            l_cur = 1 + k - x
            table[(1, k)] = l_cur
            for n in range(1, m_max - k):
                l_next = ((2 * n + 1 + k - x) * l_cur - (n + k) * l_prev) / (n + 1)
                table[(n + 1, k)] = l_next
                l_prev, l_cur = l_cur, l_next
    return table


def wigner(rho_or_state, grid) -> np.ndarray:
    """W(beta) = (2/pi) Tr[rho D(beta) P D(beta)^dag] at complex points ``grid``.

    Accepts a single-mode ``QuantumState``, a state vector, or a density
    matrix, and evaluates the Fock-basis matrix elements of the displaced
    parity in closed form (Laguerre polynomials), so the result is exact for
    any state supported on the given levels.
    """
    if isinstance(rho_or_state, QuantumState):
        if len(rho_or_state.dims) != 1:
            raise DimensionError("wigner expects a single-mode state; trace out the qubit first")
        v = rho_or_state.amplitudes
        rho = np.outer(v, v.conj())
    else:
        arr = np.asarray(rho_or_state, dtype=complex)
        rho = np.outer(arr, arr.conj()) if arr.ndim == 1 else arr
    grid = np.asarray(grid, dtype=complex)
    beta = grid.reshape(-1)
    n = rho.shape[0]
    x = 4 * np.abs(beta) ** 2
    lag = _laguerre_table(n - 1, x)
    w = np.zeros(beta.size)
    for m in range(n):
        # diagonal
        w += np.real(rho[m, m]) * (-1) ** m * lag[(m, 0)]
        for k in range(1, n - m):
            mk = m + k
            coef = (-1) ** m * np.sqrt(factorial(m) / factorial(mk))
            term = coef * (2 * beta) ** k * lag[(m, k)]
            # rho_{m+k, m} pairs with (2 beta)^k; adding the conjugate pair doubles the real part
            w += 2 * np.real(rho[mk, m] * np.conj(term))
    w *= 2 / np.pi * np.exp(-2 * np.abs(beta) ** 2)
    return w.reshape(grid.shape)


def phase_space_grid(extent: float = 4.0, points: int = 81) -> np.ndarray:
    """Square grid of complex beta = x + i p with |x|, |p| <= extent."""
    axis = np.linspace(-extent, extent, points)
    return axis[None, :] + 1j * axis[:, None]
