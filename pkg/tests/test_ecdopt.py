import numpy as np
import pytest

from oracles import central_difference
from qrlfd.ecdopt import EcdOptConfig, ecd_fidelity_and_gradient, nominal_ecd_env, optimize_ecd
from qrlfd.env import BiasModel, EcdCircuitParams, EcdEnv, _run_ecd
from qrlfd.dynamics import fidelity
from qrlfd.model import make_target
from qrlfd.qmath import QuantumState


def circuit_fidelity(v, fb, ft, psi0, target):
    return fidelity(_run_ecd(EcdCircuitParams.from_vector(v), fb, ft, psi0), target)


@pytest.mark.parametrize("n_q", [2, 3])
def test_gradient_matches_finite_differences(rng, n_q):
    depth, n_c = 3, 15
    dims = (n_q, n_c)
    psi0 = QuantumState.basis(dims, 0, 0)
    target = make_target("cat", dims, alpha=1.0)
    for _ in range(4):
        v = rng.uniform(-1.5, 1.5, 4 * depth)
        fb, ft = rng.uniform(0.8, 1.2, (2, depth))
        f, g = ecd_fidelity_and_gradient(EcdCircuitParams.from_vector(v), fb, ft, psi0, target)
        assert f == pytest.approx(circuit_fidelity(v, fb, ft, psi0, target), abs=1e-13)
        ref = central_difference(lambda x: circuit_fidelity(x, fb, ft, psi0, target), v, 1e-6)
        np.testing.assert_allclose(g, ref, atol=1e-8)


def test_gradient_at_zero_displacement(rng):
    # |beta| = 0 uses the generator directly instead of the polar chain rule
    dims = (2, 12)
    psi0 = QuantumState.basis(dims, 0, 0)
    target = make_target("fock", dims, n=1)
    v = rng.uniform(0.2, 1.0, 8)
    v[0] = v[2] = 0.0
    ones = np.ones(2)
    _, g = ecd_fidelity_and_gradient(EcdCircuitParams.from_vector(v), ones, ones, psi0, target)
    ref = central_difference(lambda x: circuit_fidelity(x, ones, ones, psi0, target), v, 1e-6)
    np.testing.assert_allclose(g, ref, atol=1e-8)


def test_optimizer_prepares_small_cat():
    env = EcdEnv(5, make_target("cat", (2, 15), alpha=1.0))
    res = optimize_ecd(env, EcdOptConfig(restarts=4, target_fidelity=0.99), seed=0)
    assert res.fidelity >= 0.99
    assert res.converged
    assert all(b >= a for a, b in zip(res.trace, res.trace[1:]))
    assert np.all(np.abs(res.action) <= 1.0)
    assert env.true_fidelity(res.action) == pytest.approx(res.fidelity, abs=1e-10)


def test_optimizer_is_seeded():
    env = EcdEnv(2, make_target("fock", (2, 10), n=1))
    cfg = EcdOptConfig(restarts=2, max_iters=50)
    a = optimize_ecd(env, cfg, seed=4)
    b = optimize_ecd(env, cfg, seed=4)
    np.testing.assert_array_equal(a.action, b.action)


def test_nominal_env_drops_bias():
    env = EcdEnv(2, make_target("fock", (2, 10), n=1), BiasModel(level=0.2, max_level=0.25))
    nominal = nominal_ecd_env(env)
    action = np.linspace(-0.5, 0.5, 8)
    assert nominal.bias.level == 0
    assert nominal.true_fidelity(action) != env.true_fidelity(action)
