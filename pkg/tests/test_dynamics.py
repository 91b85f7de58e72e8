import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import random_state, taylor_expm
from qrlfd.dynamics import (
    PulseSet,
    fidelity,
    lowpass_filter,
    moving_average_filter,
    propagate,
    segment_unitaries,
)
from qrlfd.model import SystemSpec, build_kerr_system, build_two_qubit_system
from qrlfd.qmath import SIGMA_X, SIGMA_Z, DimensionError, QuantumState

seeds = st.integers(0, 2**32 - 1)


def qubit_spec(n_segments, dt, drift=0.0):
    return SystemSpec((2,), (("z", 0.5 * drift * SIGMA_Z),), (("x", SIGMA_X),), ((-1.0, 1.0),), dt, n_segments)


def random_pulses(rng, spec, scale=0.3):
    return PulseSet(spec.dt, tuple(spec.labels), scale * rng.normal(size=(spec.n_controls, spec.n_segments)))


def test_zero_pulse_zero_drift_is_identity(rng):
    spec = qubit_spec(5, 1.0)
    psi0 = QuantumState((2,), random_state(rng, 2))
    out = propagate(spec, PulseSet.zeros(spec), psi0)
    np.testing.assert_allclose(out.amplitudes, psi0.amplitudes, atol=1e-15)


def test_rabi_pi_pulse():
    spec = qubit_spec(4, 2.5)
    u = np.pi / 2 / spec.duration
    out = propagate(spec, PulseSet(spec.dt, ("x",), np.full((1, 4), u)), QuantumState.basis((2,), 0))
    np.testing.assert_allclose(out.amplitudes, [0, -1j], atol=1e-12)


def test_refinement_consistency(rng):
    spec = build_two_qubit_system(n_segments=2, dt=3.0)
    fine = spec.with_segments(4, dt=1.5)
    coarse = random_pulses(rng, spec)
    refined = PulseSet(1.5, coarse.labels, np.repeat(coarse.values, 2, axis=1))
    psi0 = QuantumState((2, 2), random_state(rng, 4))
    a = propagate(spec, coarse, psi0).amplitudes
    b = propagate(fine, refined, psi0).amplitudes
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_propagate_matches_series_product(rng):
    spec = build_kerr_system(n_segments=3, dt=8.0)
    pulses = random_pulses(rng, spec, scale=0.05)
    psi0 = QuantumState(spec.dims, random_state(rng, spec.dim))
    u = np.eye(spec.dim, dtype=complex)
    for j in range(3):
        h = spec.h0 + np.einsum("k,kab->ab", pulses.values[:, j], spec.control_stack)
        u = taylor_expm(h, spec.dt) @ u
    np.testing.assert_allclose(propagate(spec, pulses, psi0).amplitudes, u @ psi0.amplitudes, atol=1e-9)
    units = segment_unitaries(spec, pulses)
    np.testing.assert_allclose(units[2] @ units[1] @ units[0], u, atol=1e-9)


@given(seeds)
def test_propagate_preserves_norm(seed):
    rng = np.random.default_rng(seed)
    spec = build_kerr_system(n_segments=6, dt=8.0)
    psi0 = QuantumState(spec.dims, random_state(rng, spec.dim))
    out = propagate(spec, random_pulses(rng, spec, scale=0.2), psi0)
    assert abs(out.norm() - 1) < 1e-9


def test_propagate_dimension_mismatch():
    spec = build_two_qubit_system(n_segments=3)
    with pytest.raises(DimensionError):
        propagate(spec, PulseSet(2.0, ("a",), np.zeros((1, 3))), QuantumState.basis((2, 2), 0, 0))
    with pytest.raises(DimensionError):
        propagate(spec, PulseSet.zeros(spec), QuantumState.basis((2,), 0))


def test_fidelity_examples(rng):
    s = random_state(rng, 4)
    assert fidelity(s, s) == pytest.approx(1.0)
    assert fidelity(np.array([1, 0]), np.array([0, 1])) == 0.0
    assert fidelity(np.array([1, 1]) / np.sqrt(2), np.array([1, 0])) == pytest.approx(0.5)
    with pytest.raises(DimensionError):
        fidelity(np.ones(2), np.ones(3))


@given(seeds)
def test_fidelity_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = random_state(rng, 5), random_state(rng, 5)
    assert fidelity(a, b) == fidelity(b, a)
    assert 0.0 <= fidelity(a, b) <= 1.0 + 1e-12


def pulses_of(values, dt=8.0):
    values = np.atleast_2d(values)
    return PulseSet(dt, tuple(f"c{k}" for k in range(values.shape[0])), values)


def test_moving_average_examples():
    p = pulses_of([0, 0, 1, 0, 0])
    np.testing.assert_allclose(moving_average_filter(p, 3).values[0], [0, 1 / 3, 1 / 3, 1 / 3, 0])
    np.testing.assert_array_equal(moving_average_filter(p, 1).values, p.values)
    const = pulses_of(np.full((2, 9), 0.7))
    for w in (3, 5, 7):
        np.testing.assert_allclose(moving_average_filter(const, w).values, const.values, atol=1e-15)


def test_moving_average_replicates_edges():
    out = moving_average_filter(pulses_of([3.0, 0.0, 0.0, 0.0]), 3).values[0]
    np.testing.assert_allclose(out, [2.0, 1.0, 0.0, 0.0])


def test_moving_average_rejects_even_window():
    with pytest.raises(ValueError):
        moving_average_filter(pulses_of([1.0, 2.0]), 2)


def test_lowpass_identity_above_nyquist(rng):
    p = pulses_of(rng.normal(size=(3, 16)))
    np.testing.assert_allclose(lowpass_filter(p, 62.5).values, p.values, atol=1e-10)
    np.testing.assert_allclose(lowpass_filter(p, 500.0).values, p.values, atol=1e-10)


def test_lowpass_keeps_dc():
    p = pulses_of(np.full((1, 40), -0.4))
    np.testing.assert_allclose(lowpass_filter(p, 0.5).values, p.values, atol=1e-12)


def test_lowpass_removes_tone_above_cutoff():
    # 40 samples at dt = 8 ns span 320 ns, so bins are 3.125 MHz apart and 30 MHz is not a bin;
    # 50 samples at 8 ns give 2.5 MHz bins, 30 MHz is bin 12
    n, dt = 50, 8.0
    t = np.arange(n) * dt
    tone = np.cos(2 * np.pi * 30e-3 * t)
    out = lowpass_filter(pulses_of(tone, dt), 25.0).values[0]
    assert np.sum(out**2) < 1e-6 * np.sum(tone**2)


def test_lowpass_rejects_nonpositive_cutoff():
    with pytest.raises(ValueError):
        lowpass_filter(pulses_of([1.0, 2.0]), 0.0)


@given(seeds, st.floats(-2, 2), st.floats(-2, 2), st.sampled_from([3.0, 12.5, 31.25]))
def test_filters_linear(seed, a, b, cutoff):
    rng = np.random.default_rng(seed)
    u, v = rng.normal(size=(2, 4, 40))
    combo = pulses_of(a * u + b * v)
    for f in (lambda p: moving_average_filter(p, 3), lambda p: lowpass_filter(p, cutoff)):
        expected = a * f(pulses_of(u)).values + b * f(pulses_of(v)).values
        np.testing.assert_allclose(f(combo).values, expected, atol=1e-10)


@given(seeds, st.sampled_from([6.25, 12.5, 31.25, 81.25]))
def test_lowpass_idempotent(seed, cutoff):
    p = pulses_of(np.random.default_rng(seed).normal(size=(4, 40)))
    once = lowpass_filter(p, cutoff)
    np.testing.assert_allclose(lowpass_filter(once, cutoff).values, once.values, atol=1e-10)


def test_pulseset_validation_and_clamp():
    with pytest.raises(DimensionError):
        PulseSet(1.0, ("a",), np.zeros(3))
    with pytest.raises(DimensionError):
        PulseSet(1.0, ("a", "b"), np.zeros((1, 3)))
    spec = build_two_qubit_system(n_segments=2)
    big = PulseSet(spec.dt, tuple(spec.labels), np.full((3, 2), -10.0)).clamp(spec)
    assert np.all(big.values[2] == 0.0)
    assert np.all(big.values[0] == spec.amp_bounds[0][0])
