"""Gradient ascent pulse engineering on the nominal model.

The fidelity gradient uses forward states and backward co-states, and the
exact derivative of each segment exponential taken in the eigenbasis of that
segment's Hamiltonian, so it agrees with finite differences for any ``dt``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dynamics import PulseSet, _check, evolve_states, segment_eigensystems
from .model import SystemSpec
from .qmath import QuantumState

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GrapeConfig:
    learning_rate: float = 1e-3
    max_iters: int = 2000
    target_fidelity: float = 0.999
    # when set, accepted steps may overshoot target_fidelity by at most this much
    stop_fidelity_window: float | None = None
    max_learning_rate: float = 1e3

    def __post_init__(self):
        if not 0 <= self.target_fidelity <= 1:
            raise ValueError("target_fidelity must lie in [0, 1]")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class GrapeResult:
    pulses: PulseSet
    trace: list[float]
    converged: bool

    @property
    def fidelity(self) -> float:
        return self.trace[-1]


def _divided_differences(w: np.ndarray, dt: float) -> np.ndarray:
    """G[j, m, n] = (e^{-i w_m dt} - e^{-i w_n dt}) / (w_m - w_n), limit -i dt e^{-i w dt}."""
    e = np.exp(-1j * w * dt)
    dw = w[:, :, None] - w[:, None, :]
    de = e[:, :, None] - e[:, None, :]
    close = np.abs(dw) < 1e-10
    safe = np.where(close, 1.0, dw)
    g = np.where(close, -1j * dt * e[:, :, None], de / safe)
    return g


def fidelity_and_gradient(spec: SystemSpec, pulses: PulseSet, psi0: QuantumState,
                          target: QuantumState) -> tuple[float, np.ndarray]:
    _check(spec, pulses, psi0)
    w, v = segment_eigensystems(spec, pulses.values)
    states = evolve_states(spec, pulses, psi0, eig=(w, v))
    overlap = np.vdot(target.amplitudes, states[-1])
    n = pulses.n_segments
    g = _divided_differences(w, pulses.dt)
    # backward co-states chi_j = U_{j+1}^dag ... U_N^dag |C>, stored for j = N-1 .. 0
    phases = np.exp(-1j * w * pulses.dt)
    chi = target.amplitudes.copy()
    grad = np.empty((spec.n_controls, n))
    for j in range(n - 1, -1, -1):
        vj = v[j]
        chi_t = vj.conj().T @ chi
        psi_t = vj.conj().T @ states[j]
        m = np.outer(chi_t.conj(), psi_t) * g[j]
        b = vj.conj() @ m @ vj.T
        d_overlap = np.einsum("kpq,pq->k", spec.control_stack, b)
        grad[:, j] = 2 * np.real(np.conj(overlap) * d_overlap)
        chi = vj @ (phases[j].conj() * chi_t)
    return float(abs(overlap) ** 2), grad


def grape_gradient(spec: SystemSpec, pulses: PulseSet, psi0: QuantumState,
                   target: QuantumState) -> np.ndarray:
    """dJ/du_k[j] with J = |<C|psi(T)>|^2; shape (channels, segments)."""
    return fidelity_and_gradient(spec, pulses, psi0, target)[1]


def initial_guess(spec: SystemSpec, seed: int = 0, scale: float = 0.01) -> PulseSet:
    """Small seeded Gaussian noise around the centre of each channel's range."""
    rng = np.random.default_rng(seed)
    lo, hi = np.array(spec.amp_bounds).T
    centre = np.where((lo < 0) & (hi > 0), 0.0, 0.5 * (lo + hi))
    span = np.maximum(np.abs(lo), np.abs(hi))
    vals = centre[:, None] + scale * span[:, None] * rng.standard_normal((spec.n_controls, spec.n_segments))
    return PulseSet(spec.dt, tuple(spec.labels), vals).clamp(spec)


def grape_optimize(spec: SystemSpec, psi0: QuantumState, target: QuantumState,
                   u0: PulseSet, cfg: GrapeConfig = GrapeConfig()) -> GrapeResult:
    """Ascend J with u <- clamp(u + alpha dJ/du), halving alpha on any decrease.

    Accepted steps double alpha (capped at ``max_learning_rate``), so the trace
    is non-decreasing by construction.
    """
    u = u0.clamp(spec)
    fid, grad = fidelity_and_gradient(spec, u, psi0, target)
    trace = [fid]
    if fid >= cfg.target_fidelity:
        return GrapeResult(u, trace, True)
    ceiling = np.inf if cfg.stop_fidelity_window is None else cfg.target_fidelity + cfg.stop_fidelity_window
    alpha = cfg.learning_rate
    for it in range(cfg.max_iters):
        cand = u.replace_values(u.values + alpha * grad).clamp(spec)
        cand_fid, cand_grad = fidelity_and_gradient(spec, cand, psi0, target)
        if cand_fid < fid or cand_fid > ceiling:
            alpha *= 0.5
            if alpha < 1e-14:
                break
            continue
        u, fid, grad = cand, cand_fid, cand_grad
        trace.append(fid)
        alpha = min(2 * alpha, cfg.max_learning_rate)
        if fid >= cfg.target_fidelity:
            log.debug("GRAPE reached %.6f after %d iterations", fid, it + 1)
            return GrapeResult(u, trace, True)
    return GrapeResult(u, trace, False)
