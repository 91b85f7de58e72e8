import numpy as np
import pytest

from oracles import displaced_parity_wigner, random_state
from qrlfd.model import (
    KerrParams,
    TruncationError,
    TwoQubitParams,
    build_kerr_system,
    build_two_qubit_system,
    check_hermitian,
    coherent_amplitudes,
    make_target,
    mean_photon_number,
    phase_space_grid,
    wigner,
)
from qrlfd.qmath import QuantumState, dagger

# cat(alpha=2) on 7 levels: even Fock amplitudes of |2> + |-2>, truncated and
# renormalized, evaluated at 30 digits with mpmath
CAT2_N7 = [0.19859277056036839, 0.0, 0.56170517903144258, 0.0, 0.64860127263802061, 0.0, 0.47367139713386956]
CAT2_N7_LOST = 0.0715050765894148


def test_two_qubit_shape():
    spec = build_two_qubit_system(n_segments=50)
    assert spec.n_controls == 3
    assert spec.n_segments == 50
    assert spec.action_dim == 150
    assert spec.amp_bounds[2][0] == 0.0


def test_two_qubit_resonant_frame_has_zero_drift():
    spec = build_two_qubit_system(TwoQubitParams(omega1=0.0, omega2=0.0))
    np.testing.assert_array_equal(spec.h0, np.zeros((4, 4)))


def test_two_qubit_drift_and_coupler():
    p = TwoQubitParams(omega1=0.3, omega2=0.7)
    spec = build_two_qubit_system(p)
    np.testing.assert_allclose(np.diag(spec.h0).real, 0.5 * np.array([0.3 + 0.7, 0.3 - 0.7, -0.3 + 0.7, -0.3 - 0.7]))
    coupler = spec.controls[2][1]
    # swaps |01> and |10>, nothing else
    expected = np.zeros((4, 4))
    expected[1, 2] = expected[2, 1] = 1
    np.testing.assert_array_equal(coupler, expected)


def test_systems_hermitian():
    assert check_hermitian(build_two_qubit_system())
    assert check_hermitian(build_kerr_system())
    spec = build_kerr_system(KerrParams(chi_prime=0.01, d_omega_c=0.1, d_omega_q=-0.2))
    for m in [spec.h0] + [m for _, m in spec.controls]:
        assert np.max(np.abs(m - dagger(m))) < 1e-12


def test_kerr_action_dims():
    assert build_kerr_system(n_segments=275).action_dim == 1100
    assert build_kerr_system(n_segments=550).action_dim == 2200
    assert build_kerr_system().dims == (3, 7)


def test_kerr_zero_params_zero_drift():
    p = KerrParams(chi=0.0, e_c=0.0, k_self=0.0, chi_prime=0.0)
    np.testing.assert_array_equal(build_kerr_system(p).h0, np.zeros((21, 21)))


def test_kerr_param_validation():
    with pytest.raises(ValueError):
        KerrParams(n_q=1)
    with pytest.raises(ValueError):
        TwoQubitParams(g_max=0.0)


def test_binomial_target():
    t = make_target("binomial", (3, 7))
    amps = t.amplitudes.reshape(3, 7)
    expected = np.zeros((3, 7))
    expected[0, [0, 4]] = 1 / np.sqrt(2)
    np.testing.assert_allclose(amps, expected, atol=1e-15)


def test_bell_target():
    t = make_target("bell", (2, 2))
    assert t.amplitudes[0] == pytest.approx(1 / np.sqrt(2))
    assert t.amplitudes[3] == pytest.approx(1 / np.sqrt(2))


def test_cat_amplitudes_against_frozen_expansion():
    t = make_target("cat", (3, 7), alpha=2.0)
    cav = t.amplitudes.reshape(3, 7)[0]
    np.testing.assert_allclose(cav.real, CAT2_N7, atol=1e-12)
    np.testing.assert_allclose(cav.imag, 0, atol=1e-15)
    assert t.truncated_weight == pytest.approx(CAT2_N7_LOST, rel=1e-9)


def test_coherent_amplitudes_untruncated_normalization():
    c = coherent_amplitudes(1.5 + 0.5j, 80)
    assert np.linalg.norm(c) == pytest.approx(1.0, abs=1e-12)


def test_targets_have_unit_norm():
    for kind, dims in [("bell", (2, 2)), ("binomial", (3, 7)), ("cat", (3, 7)), ("cat", (2, 30)),
                       ("gkp", (2, 40)), ("fock", (3, 7)), ("gkp", (40,))]:
        assert abs(make_target(kind, dims).norm() - 1) < 1e-10


def test_target_truncation_errors():
    with pytest.raises(TruncationError):
        make_target("binomial", (3, 4))
    with pytest.raises(TruncationError):
        make_target("fock", (3, 7), n=7)
    with pytest.raises(TruncationError):
        make_target("bell", (3, 7))
    with pytest.raises(ValueError):
        make_target("squeezed", (3, 7))


def test_gkp_truncation_is_small_at_forty_levels():
    assert make_target("gkp", (2, 40), delta=0.3).truncated_weight < 1e-3


def test_gkp_photon_number_decreases_with_delta():
    nbar = [mean_photon_number(make_target("gkp", (2, 60), delta=d)) for d in (0.2, 0.3, 0.4)]
    assert nbar[0] > nbar[1] > nbar[2]


def test_gkp_is_even_in_position():
    # a square-lattice |0_L> is parity-even: only even Fock levels
    amps = make_target("gkp", (40,)).amplitudes
    assert np.max(np.abs(amps[1::2])) < 1e-10


def test_wigner_vacuum_and_one_photon_at_origin():
    assert wigner(np.array([1, 0, 0], dtype=complex), [0j])[0] == pytest.approx(2 / np.pi)
    assert wigner(np.array([0, 1, 0], dtype=complex), [0j])[0] == pytest.approx(-2 / np.pi)


def test_wigner_matches_displaced_parity_oracle(rng):
    for _ in range(3):
        v = random_state(rng, 6)
        rho = np.outer(v, v.conj())
        points = rng.normal(size=4) + 1j * rng.normal(size=4)
        ours = wigner(rho, points)
        ref = [displaced_parity_wigner(rho, b) for b in points]
        np.testing.assert_allclose(ours, ref, atol=1e-10)


def test_wigner_even_cat_symmetric():
    cav = make_target("cat", (30,), alpha=2.0)
    grid = phase_space_grid(3.0, 21)
    w = wigner(cav, grid)
    np.testing.assert_allclose(w, wigner(cav, -grid), atol=1e-8)
    assert np.all(np.abs(w) <= 2 / np.pi + 1e-12)


def test_wigner_integrates_to_one():
    cav = make_target("cat", (30,), alpha=1.5)
    extent, points = 5.0, 101
    w = wigner(cav, phase_space_grid(extent, points))
    step = 2 * extent / (points - 1)
    assert w.sum() * step**2 == pytest.approx(1.0, abs=1e-6)


def test_wigner_rejects_joint_state():
    from qrlfd.qmath import DimensionError

    with pytest.raises(DimensionError):
        wigner(QuantumState.basis((2, 3), 0, 0), [0j])
