"""Nominal-model optimisation of ECD circuit parameters.

Supplies the demonstrations for the gate-level task. The infidelity gradient
is exact in the truncated space: forward states and back-propagated target
co-states per layer, with displacement derivatives taken through the same
eigendecomposition that builds D(beta). Circuit parameters are tuned by
bounded quasi-Newton descent from several random starts, in the same
normalised coordinates the agent acts in.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .env import (
    BiasModel,
    EcdCircuitParams,
    EcdEnv,
    _FACTORIES,
    DisplacementFactory,
    gate_bias_factors,
    qubit_rotation,
)
from .qmath import SIGMA_X, SIGMA_Y, DimensionError, QuantumState, dagger, destroy


def _factory(n: int) -> DisplacementFactory:
    if n not in _FACTORIES:
        _FACTORIES[n] = DisplacementFactory(n)
    return _FACTORIES[n]


def _displacement_and_derivs(beta: complex, n: int):
    """D(beta) and its partial derivatives in Re(beta) and Im(beta)."""
    fac = _factory(n)
    r, phi = abs(beta), np.angle(beta)
    ph = np.exp(-1j * r * fac.w)
    core = (fac.v * ph) @ fac.v.conj().T
    rot = np.exp(1j * phi * np.arange(n))
    d = rot[:, None] * core * rot.conj()[None, :]
    if r < 1e-10:
        a = destroy(n)
        gen = dagger(a) - a
        return d, gen @ d, 1j * (dagger(a) + a) @ d
    d_core = (fac.v * (-1j * fac.w * ph)) @ fac.v.conj().T
    d_r = rot[:, None] * d_core * rot.conj()[None, :]
    levels = np.arange(n)
    d_phi = 1j * (levels[:, None] - levels[None, :]) * d
    c, s = np.cos(phi), np.sin(phi)
    return d, c * d_r - (s / r) * d_phi, s * d_r + (c / r) * d_phi


def _rotation_derivs(theta: float, phi: float, n_q: int):
    ax = np.cos(phi) * SIGMA_X + np.sin(phi) * SIGMA_Y
    d_theta = -0.5 * np.sin(theta / 2) * np.eye(2) - 0.5j * np.cos(theta / 2) * ax
    d_phi = -1j * np.sin(theta / 2) * (-np.sin(phi) * SIGMA_X + np.cos(phi) * SIGMA_Y)
    out = []
    for m in (d_theta, d_phi):
        full = np.zeros((n_q, n_q), dtype=complex)
        full[:2, :2] = m
        out.append(full)
    return out


def ecd_fidelity_and_gradient(params: EcdCircuitParams, fb, ft, psi0: QuantumState, target: QuantumState):
    """Fidelity of the circuit and its gradient in (beta_re, beta_im, phi, theta) vector order."""
    n_q, n_c = psi0.dims
    if n_q < 2:
        raise DimensionError("ECD circuits need at least two qubit levels")
    depth = params.depth
    psi = psi0.amplitudes.reshape(n_q, n_c)
    befores, mids, disp = [], [], []
    for k in range(depth):
        th, ph = ft[k] * params.theta[k], params.phi[k]
        befores.append(psi)
        mid = qubit_rotation(th, ph, n_q) @ psi
        mids.append(mid)
        b = fb[k] * params.beta[k]
        dp = _displacement_and_derivs(b / 2, n_c)
        dm = _displacement_and_derivs(-b / 2, n_c)
        disp.append((dp, dm))
        psi = mid.copy()
        psi[1] = dp[0] @ mid[0]
        psi[0] = dm[0] @ mid[1]
    c = target.amplitudes.reshape(n_q, n_c)
    overlap = np.vdot(c, psi)
    f = float(abs(overlap) ** 2)
    grad = np.zeros((4, depth))
    chi = c.copy()
    for k in reversed(range(depth)):
        (dp, dm), mid = disp[k], mids[k]
        # d psi_after / d beta_x for x in (re, im): D(+b/2) gets +1/2, D(-b/2) gets -1/2
        for x in (0, 1):
            dpsi = np.zeros_like(mid)
            dpsi[1] = 0.5 * dp[1 + x] @ mid[0]
            dpsi[0] = -0.5 * dm[1 + x] @ mid[1]
            grad[x, k] = 2.0 * fb[k] * np.real(np.conj(overlap) * np.vdot(chi, dpsi))
        # co-state before the ECD: ECD^dag chi
        chi_mid = chi.copy()
        chi_mid[0] = dp[0].conj().T @ chi[1]
        chi_mid[1] = dm[0].conj().T @ chi[0]
        th, ph = ft[k] * params.theta[k], params.phi[k]
        d_th, d_ph = _rotation_derivs(th, ph, n_q)
        before = befores[k]
        grad[3, k] = 2.0 * ft[k] * np.real(np.conj(overlap) * np.vdot(chi_mid, d_th @ before))
        grad[2, k] = 2.0 * np.real(np.conj(overlap) * np.vdot(chi_mid, d_ph @ before))
        chi = qubit_rotation(th, ph, n_q).conj().T @ chi_mid
    return f, grad.reshape(-1)


@dataclass(frozen=True)
class EcdOptConfig:
    restarts: int = 8
    max_iters: int = 500
    target_fidelity: float = 0.999
    init_scale: float = 0.3


@dataclass
class EcdOptResult:
    params: EcdCircuitParams
    action: np.ndarray
    fidelity: float
    converged: bool
    trace: list[float]


def optimize_ecd(env: EcdEnv, cfg: EcdOptConfig = EcdOptConfig(), seed: int = 0) -> EcdOptResult:
    """Best circuit found for ``env.target`` on the nominal (bias-free) model.

    ``trace`` holds the best fidelity after each restart.
    """
    rng = np.random.default_rng(seed)
    ones = np.ones(env.depth)
    scale = 0.5 * (env._hi - env._lo)

    def objective(a):
        params = env.decode(a)
        f, g = ecd_fidelity_and_gradient(params, ones, ones, env.psi0, env.target)
        return 1.0 - f, -g * scale

    best_a, best_f, trace = None, -np.inf, []
    bounds = [(-1.0, 1.0)] * env.action_dim
    for _ in range(cfg.restarts):
        a0 = np.clip(rng.normal(0.0, cfg.init_scale, env.action_dim), -1.0, 1.0)
        res = minimize(objective, a0, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": cfg.max_iters, "ftol": 1e-14, "gtol": 1e-10})
        f = 1.0 - float(res.fun)
        if f > best_f:
            best_a, best_f = res.x.copy(), f
        trace.append(best_f)
        if best_f >= cfg.target_fidelity:
            break
    return EcdOptResult(env.decode(best_a), best_a, best_f, best_f >= cfg.target_fidelity, trace)


def nominal_ecd_env(env: EcdEnv) -> EcdEnv:
    """Same task with the gate-parameter bias removed."""
    return EcdEnv(env.depth, env.target, BiasModel(max_level=env.bias.max_level), env.ranges)
