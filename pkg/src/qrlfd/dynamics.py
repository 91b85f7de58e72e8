"""Piecewise-constant evolution, fidelity and pulse-distortion filters."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import SystemSpec
from .qmath import DimensionError, QuantumState, dagger


@dataclass(frozen=True)
class PulseSet:
    """Piecewise-constant controls: ``values[k, j]`` is channel k on segment j (rad/ns)."""

    dt: float
    labels: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 2:
            raise DimensionError("pulse values must be (channels, segments)")
        if len(self.labels) != vals.shape[0]:
            raise DimensionError("one label per channel")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def n_segments(self) -> int:
        return self.values.shape[1]

    def replace_values(self, values) -> "PulseSet":
        return PulseSet(self.dt, self.labels, values)

    @classmethod
    def zeros(cls, spec: SystemSpec) -> "PulseSet":
        return cls(spec.dt, tuple(spec.labels), np.zeros((spec.n_controls, spec.n_segments)))

    def clamp(self, spec: SystemSpec) -> "PulseSet":
        lo, hi = np.array(spec.amp_bounds).T
        return self.replace_values(np.clip(self.values, lo[:, None], hi[:, None]))


def _check(spec: SystemSpec, pulses: PulseSet, psi0: QuantumState):
    if pulses.n_channels != spec.n_controls:
        raise DimensionError(f"{pulses.n_channels} pulse channels for {spec.n_controls} controls")
    if psi0.dim != spec.dim:
        raise DimensionError(f"state dimension {psi0.dim} != system dimension {spec.dim}")


def segment_eigensystems(spec: SystemSpec, values: np.ndarray):
    """Eigenvalues (N, d) and eigenvectors (N, d, d) of every segment Hamiltonian."""
    h = spec.h0[None] + np.einsum("kj,kab->jab", values, spec.control_stack)
    return np.linalg.eigh(h)


def evolve_states(spec: SystemSpec, pulses: PulseSet, psi0: QuantumState, eig=None) -> np.ndarray:
    """All forward states; row j is the state after segment j (row 0 = psi0)."""
    _check(spec, pulses, psi0)
    w, v = segment_eigensystems(spec, pulses.values) if eig is None else eig
    phases = np.exp(-1j * w * pulses.dt)
    states = np.empty((pulses.n_segments + 1, spec.dim), dtype=complex)
    psi = psi0.amplitudes
    states[0] = psi
    for j in range(pulses.n_segments):
        psi = v[j] @ (phases[j] * (v[j].conj().T @ psi))
        states[j + 1] = psi
    return states


def propagate(spec: SystemSpec, pulses: PulseSet, psi0: QuantumState) -> QuantumState:
    """|psi(T)> = U_N ... U_1 |psi0>, U_j = exp(-i (H0 + sum_k u_kj H_k) dt)."""
    final = evolve_states(spec, pulses, psi0)[-1]
    return QuantumState(psi0.dims, final)


def segment_unitaries(spec: SystemSpec, pulses: PulseSet) -> np.ndarray:
    w, v = segment_eigensystems(spec, pulses.values)
    return (v * np.exp(-1j * w * pulses.dt)[:, None, :]) @ dagger(v)


def fidelity(psi: QuantumState | np.ndarray, target: QuantumState | np.ndarray) -> float:
    """|<target|psi>|^2."""
    a = psi.amplitudes if isinstance(psi, QuantumState) else np.asarray(psi)
    b = target.amplitudes if isinstance(target, QuantumState) else np.asarray(target)
    if a.shape != b.shape:
        raise DimensionError(f"fidelity between shapes {a.shape} and {b.shape}")
    return float(abs(np.vdot(b, a)) ** 2)


def moving_average_filter(pulses: PulseSet, window: int = 3) -> PulseSet:
    """Uniform sliding-window average with edge replication; ``window`` must be odd."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    if window == 1:
        return pulses
    half = window // 2
    padded = np.pad(pulses.values, ((0, 0), (half, half)), mode="edge")
    kernel = np.full(window, 1.0 / window)
    out = np.array([np.convolve(row, kernel, mode="valid") for row in padded])
    return pulses.replace_values(out)


def lowpass_filter(pulses: PulseSet, cutoff_mhz: float) -> PulseSet:
    """Brick-wall DFT low-pass: drop every bin with |f| > cutoff."""
    if cutoff_mhz <= 0:
        raise ValueError("cutoff must be positive")
    n = pulses.n_segments
    freqs_mhz = np.fft.fftfreq(n, d=pulses.dt) * 1e3
    keep = np.abs(freqs_mhz) <= cutoff_mhz * (1 + 1e-12)
    if keep.all():
        return pulses
    spectrum = np.fft.fft(pulses.values, axis=1)
    spectrum[:, ~keep] = 0.0
    return pulses.replace_values(np.real(np.fft.ifft(spectrum, axis=1)))
