"""Single-step control environments over deliberately biased systems.

An episode is one whole control sequence: ``reset`` returns the constant
placeholder observation ``[1.0]``, ``step`` takes a flat action in [-1, 1],
runs it on the "true" (biased, possibly band-limited) system and returns the
fidelity (or a shot-noise estimate of it) as reward. The nominal system used
to synthesise demonstrations never sees the bias.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import PulseSet, fidelity, lowpass_filter, moving_average_filter, propagate
from .model import SystemSpec
from .qmath import (
    SIGMA_X,
    SIGMA_Y,
    DimensionError,
    QuantumState,
    dagger,
    destroy,
    kron,
)

OBSERVATION = np.array([1.0])


@dataclass(frozen=True)
class FilterModel:
    kind: str  # "moving_average" | "lowpass"
    window: int = 3
    cutoff_mhz: float = 62.5

    def __post_init__(self):
        if self.kind not in ("moving_average", "lowpass"):
            raise ValueError(f"unknown filter kind {self.kind!r}")

    def __call__(self, pulses: PulseSet) -> PulseSet:
        if self.kind == "moving_average":
            return moving_average_filter(pulses, self.window)
        return lowpass_filter(pulses, self.cutoff_mhz)


@dataclass(frozen=True)
class BiasModel:
    level: float = 0.0
    mode: str = "deterministic_scale"  # or "random_scale"
    seed: int = 0
    filter: FilterModel | None = None
    max_level: float = 0.3

    def __post_init__(self):
        if not 0 <= self.level <= self.max_level:
            raise ValueError(f"bias level must lie in [0, {self.max_level}], got {self.level}")
        if self.mode not in ("deterministic_scale", "random_scale"):
            raise ValueError(f"unknown bias mode {self.mode!r}")

    def factors(self, n: int) -> np.ndarray:
        """Multiplicative factors (1 + level * xi_i) for ``n`` coefficients."""
        if self.mode == "deterministic_scale":
            return np.full(n, 1.0 + self.level)
        xi = np.random.default_rng(self.seed).uniform(-1.0, 1.0, n)
        return 1.0 + self.level * xi


def apply_bias(spec: SystemSpec, bias: BiasModel) -> SystemSpec:
    """Scale every control Hamiltonian and the biasable drift coefficients."""
    if bias.level == 0:
        return spec
    drift_idx = [i for i, (label, _) in enumerate(spec.drift_terms) if label in spec.biased_terms]
    f = bias.factors(spec.n_controls + len(drift_idx))
    controls = tuple((label, f[k] * m) for k, (label, m) in enumerate(spec.controls))
    drift = list(spec.drift_terms)
    for n, i in enumerate(drift_idx):
        label, m = drift[i]
        drift[i] = (label, f[spec.n_controls + n] * m)
    return replace(spec, controls=controls, drift_terms=tuple(drift))


def povm_reward(f: float, shots: int, rng: np.random.Generator) -> float:
    """Fraction of successful projections onto the target in ``shots`` trials."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    f = min(max(float(f), 0.0), 1.0)
    return rng.binomial(shots, f) / shots


class ActionError(ValueError):
    pass


def _check_action(action, size: int) -> np.ndarray:
    a = np.asarray(action, dtype=float).reshape(-1)
    if a.size != size:
        raise ActionError(f"action has {a.size} entries, expected {size}")
    if not np.all(np.isfinite(a)):
        raise ActionError("action contains NaN or inf")
    return a


class PulseEnv:
    """Pulse-level state preparation on a biased copy of ``spec``."""

    def __init__(self, spec: SystemSpec, target: QuantumState, psi0: QuantumState | None = None,
                 bias: BiasModel = BiasModel(), reward_mode: str = "exact", shots: int = 1000,
                 seed: int = 0):
        if reward_mode not in ("exact", "povm"):
            raise ValueError(f"unknown reward mode {reward_mode!r}")
        self.nominal = spec
        self.true_spec = apply_bias(spec, bias)
        self.bias = bias
        self.target = target
        self.psi0 = psi0 if psi0 is not None else QuantumState.basis(spec.dims, *([0] * len(spec.dims)))
        if self.psi0.dim != spec.dim or target.dim != spec.dim:
            raise DimensionError("initial/target state dimension does not match the system")
        self.reward_mode = reward_mode
        self.shots = shots
        self.rng = np.random.default_rng(seed)
        lo, hi = np.array(spec.amp_bounds).T
        self._lo = np.repeat(lo, spec.n_segments)
        self._hi = np.repeat(hi, spec.n_segments)
        self.state = self.psi0

    @property
    def action_dim(self) -> int:
        return self.nominal.action_dim

    obs_dim = 1

    def encode(self, pulses: PulseSet) -> np.ndarray:
        """Physical pulse values -> action in [-1, 1] (affine, per channel)."""
        u = np.asarray(pulses.values, dtype=float).reshape(-1)
        return 2.0 * (u - self._lo) / (self._hi - self._lo) - 1.0

    def decode(self, action) -> PulseSet:
        a = np.clip(np.asarray(action, dtype=float).reshape(-1), -1.0, 1.0)
        u = self._lo + 0.5 * (a + 1.0) * (self._hi - self._lo)
        spec = self.nominal
        return PulseSet(spec.dt, tuple(spec.labels), u.reshape(spec.n_controls, spec.n_segments))

    def executed_pulses(self, action) -> PulseSet:
        pulses = self.decode(action)
        return self.bias.filter(pulses) if self.bias.filter is not None else pulses

    def final_state(self, action) -> QuantumState:
        return propagate(self.true_spec, self.executed_pulses(action), self.psi0)

    def true_fidelity(self, action) -> float:
        return fidelity(self.final_state(action), self.target)

    def reset(self) -> np.ndarray:
        self.state = self.psi0
        return OBSERVATION.copy()

    def step(self, action):
        a = _check_action(action, self.action_dim)
        self.state = self.final_state(a)
        f = fidelity(self.state, self.target)
        r = f if self.reward_mode == "exact" else povm_reward(f, self.shots, self.rng)
        return OBSERVATION.copy(), float(r), True, {"fidelity": f}


# --- echoed conditional displacement circuits --------------------------------

class DisplacementFactory:
    """Cavity displacements D(beta) on ``n`` levels from one eigendecomposition.

    D(beta) = R(phi) exp(|beta| (a^dag - a)) R(phi)^dag with R(phi) = exp(i phi n).
    """

    def __init__(self, n: int):
        a = destroy(n)
        gen = 1j * (dagger(a) - a)  # Hermitian, exp(|b|(a^dag - a)) = exp(-i |b| gen)
        self.w, self.v = np.linalg.eigh(gen)
        self.n = n

    def __call__(self, beta: complex) -> np.ndarray:
        r, phi = abs(beta), np.angle(beta)
        core = (self.v * np.exp(-1j * r * self.w)) @ self.v.conj().T
        rot = np.exp(1j * phi * np.arange(self.n))
        return rot[:, None] * core * rot.conj()[None, :]


_FACTORIES: dict[int, DisplacementFactory] = {}


def displacement(beta: complex, n: int) -> np.ndarray:
    if n not in _FACTORIES:
        _FACTORIES[n] = DisplacementFactory(n)
    return _FACTORIES[n](beta)


def ecd_unitary(beta: complex, dims) -> np.ndarray:
    """ECD(beta) = |e><g| (x) D(beta/2) + |g><e| (x) D(-beta/2) on qubit (x) cavity.

    Qubit levels above |e> are left untouched.
    """
    n_q, n_c = dims
    if n_q < 2:
        raise DimensionError("ECD needs at least two qubit levels")
    u = np.zeros((n_q * n_c, n_q * n_c), dtype=complex)
    ge = np.zeros((n_q, n_q), dtype=complex)
    eg = np.zeros((n_q, n_q), dtype=complex)
    eg[1, 0] = 1.0
    ge[0, 1] = 1.0
    u += kron(eg, displacement(beta / 2, n_c)) + kron(ge, displacement(-beta / 2, n_c))
    if n_q > 2:
        rest = np.zeros((n_q, n_q), dtype=complex)
        rest[2:, 2:] = np.eye(n_q - 2)
        u += kron(rest, np.eye(n_c))
    return u


def qubit_rotation(theta: float, phi: float, n_q: int = 2) -> np.ndarray:
    """R_phi(theta) = exp(-i theta/2 (cos phi X + sin phi Y)) on the {g, e} block."""
    r = np.cos(theta / 2) * np.eye(2) - 1j * np.sin(theta / 2) * (np.cos(phi) * SIGMA_X + np.sin(phi) * SIGMA_Y)
    if n_q == 2:
        return r
    out = np.eye(n_q, dtype=complex)
    out[:2, :2] = r
    return out


@dataclass(frozen=True)
class EcdCircuitParams:
    """Per-layer (beta_re, beta_im, phi, theta); layer = rotation then ECD."""

    beta_re: np.ndarray
    beta_im: np.ndarray
    phi: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        arrs = [np.asarray(x, dtype=float).reshape(-1) for x in (self.beta_re, self.beta_im, self.phi, self.theta)]
        if len({a.size for a in arrs}) != 1:
            raise DimensionError("all ECD parameter arrays need the same depth")
        for name, arr in zip(("beta_re", "beta_im", "phi", "theta"), arrs):
            object.__setattr__(self, name, arr)

    @property
    def depth(self) -> int:
        return self.beta_re.size

    @property
    def beta(self) -> np.ndarray:
        return self.beta_re + 1j * self.beta_im

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.beta_re, self.beta_im, self.phi, self.theta])

    @classmethod
    def from_vector(cls, v) -> "EcdCircuitParams":
        v = np.asarray(v, dtype=float).reshape(4, -1)
        return cls(*v)

    def as_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("beta_re", "beta_im", "phi", "theta")}


def gate_bias_factors(bias: BiasModel, depth: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-layer multipliers for beta and theta."""
    f = bias.factors(2 * depth) if bias.level else np.ones(2 * depth)
    return f[:depth], f[depth:]


def run_ecd_circuit(params: EcdCircuitParams, bias: BiasModel, psi0: QuantumState) -> QuantumState:
    """Apply R_phi(theta) then ECD(beta) for each layer, with biased beta and theta."""
    fb, ft = gate_bias_factors(bias, params.depth)
    return _run_ecd(params, fb, ft, psi0)


def _run_ecd(params: EcdCircuitParams, fb, ft, psi0: QuantumState) -> QuantumState:
    dims = psi0.dims
    n_q, n_c = dims
    psi = psi0.amplitudes.reshape(n_q, n_c)
    for layer in range(params.depth):
        rot = qubit_rotation(ft[layer] * params.theta[layer], params.phi[layer], n_q)
        psi = rot @ psi
        beta = fb[layer] * params.beta[layer]
        new = psi.copy()
        new[1] = displacement(beta / 2, n_c) @ psi[0]
        new[0] = displacement(-beta / 2, n_c) @ psi[1]
        psi = new
    return QuantumState(dims, psi.reshape(-1))


@dataclass(frozen=True)
class EcdRanges:
    beta_max: float = 5.0

    def lows_highs(self, depth: int) -> tuple[np.ndarray, np.ndarray]:
        b = self.beta_max
        lo = np.concatenate([np.full(depth, -b), np.full(depth, -b), np.full(depth, -np.pi), np.zeros(depth)])
        hi = np.concatenate([np.full(depth, b), np.full(depth, b), np.full(depth, np.pi), np.full(depth, np.pi)])
        return lo, hi


class EcdEnv:
    """Gate-level state preparation: the action is 4 * depth circuit parameters."""

    obs_dim = 1

    def __init__(self, depth: int, target: QuantumState, bias: BiasModel = BiasModel(max_level=0.25),
                 ranges: EcdRanges = EcdRanges(), reward_mode: str = "exact", shots: int = 1000,
                 seed: int = 0):
        if len(target.dims) != 2:
            raise DimensionError("ECD targets live on qubit (x) cavity")
        self.depth = depth
        self.target = target
        self.dims = target.dims
        self.psi0 = QuantumState.basis(self.dims, 0, 0)
        self.bias = bias
        self.ranges = ranges
        self.reward_mode = reward_mode
        self.shots = shots
        self.rng = np.random.default_rng(seed)
        self._lo, self._hi = ranges.lows_highs(depth)
        self._fb, self._ft = gate_bias_factors(bias, depth)
        self.state = self.psi0

    @property
    def action_dim(self) -> int:
        return 4 * self.depth

    def encode(self, params: EcdCircuitParams) -> np.ndarray:
        return 2.0 * (params.to_vector() - self._lo) / (self._hi - self._lo) - 1.0

    def decode(self, action) -> EcdCircuitParams:
        a = np.clip(np.asarray(action, dtype=float).reshape(-1), -1.0, 1.0)
        return EcdCircuitParams.from_vector(self._lo + 0.5 * (a + 1.0) * (self._hi - self._lo))

    def final_state(self, action) -> QuantumState:
        return _run_ecd(self.decode(action), self._fb, self._ft, self.psi0)

    def true_fidelity(self, action) -> float:
        return fidelity(self.final_state(action), self.target)

    def reset(self) -> np.ndarray:
        self.state = self.psi0
        return OBSERVATION.copy()

    def step(self, action):
        a = _check_action(action, self.action_dim)
        self.state = self.final_state(a)
        f = fidelity(self.state, self.target)
        r = f if self.reward_mode == "exact" else povm_reward(f, self.shots, self.rng)
        return OBSERVATION.copy(), float(r), True, {"fidelity": f}
