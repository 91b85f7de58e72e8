import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import central_difference
from qrlfd.net import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    AdamState,
    GaussianPolicyOut,
    MlpNet,
    adam_step,
    gaussian_entropy,
    gaussian_log_prob,
    polyak,
    sample_squashed_gaussian,
    squashed_log_prob,
)

# tanh hidden layer then linear output, weights below, input (1, 2); evaluated by hand
HAND_TWO_LAYER = -0.3767238137711666


def random_net(rng, layernorm=False, activation="tanh"):
    sizes = [int(rng.integers(1, 5))] + [int(rng.integers(2, 7)) for _ in range(int(rng.integers(1, 3)))]
    sizes.append(int(rng.integers(1, 4)))
    net = MlpNet(sizes, activation, layernorm=layernorm, rng=rng)
    for p in net.params():
        p[...] = rng.normal(size=p.shape)
    return net


def scalar_loss(net, x, dy):
    return float(np.sum(net(x) * dy))


def flat_fd(net, x, dy, h=1e-5):
    out = []
    for p in net.params():
        orig = p.copy()

        def f(v):
            p[...] = v
            return scalar_loss(net, x, dy)

        out.append(central_difference(f, orig, h))
        p[...] = orig
    return out


def test_zero_linear_net():
    net = MlpNet([3, 2], rng=np.random.default_rng(0))
    for p in net.params():
        p[...] = 0
    np.testing.assert_array_equal(net(np.ones((4, 3))), np.zeros((4, 2)))


def test_identity_linear_layer():
    net = MlpNet([3, 3], rng=np.random.default_rng(0))
    net.layers[0].w[...] = np.eye(3)
    x = np.array([[0.3, -1.0, 2.0]])
    np.testing.assert_array_equal(net(x), x)


def test_two_layer_tanh_against_hand_value():
    net = MlpNet([2, 2, 1], "tanh", rng=np.random.default_rng(0))
    net.layers[0].w[...] = [[0.5, -0.2], [0.1, 0.3]]
    net.layers[0].b[...] = [0.1, -0.1]
    net.layers[1].w[...] = [[1.0, -2.0]]
    net.layers[1].b[...] = [0.5]
    assert net([1.0, 2.0])[0, 0] == pytest.approx(HAND_TWO_LAYER, abs=1e-15)


def test_forward_rejects_wrong_width():
    with pytest.raises(ValueError):
        MlpNet([3, 2])(np.ones(4))


def test_linear_weight_gradient_is_outer_product(rng):
    net = MlpNet([3, 2], rng=rng)
    x = rng.normal(size=(1, 3))
    dy = rng.normal(size=(1, 2))
    _, cache = net.forward(x)
    grads, dx = net.backward(cache, dy)
    np.testing.assert_allclose(grads[0], np.outer(dy, x))
    np.testing.assert_allclose(dx, dy @ net.layers[0].w)


@pytest.mark.parametrize("layernorm,activation", [(False, "tanh"), (True, "tanh"), (True, "relu"), (False, "relu")])
def test_backward_matches_finite_differences(layernorm, activation):
    rng = np.random.default_rng(11)
    for _ in range(20):
        net = random_net(rng, layernorm, activation)
        x = rng.normal(size=(3, net.in_dim))
        dy = rng.normal(size=(3, net.out_dim))
        _, cache = net.forward(x)
        grads, dx = net.backward(cache, dy)
        for g, ref in zip(grads, flat_fd(net, x, dy)):
            assert np.linalg.norm(g - ref) <= 1e-4 * max(np.linalg.norm(ref), 1e-6)
        ref_dx = central_difference(lambda v: scalar_loss(net, v, dy), x, 1e-5)
        assert np.linalg.norm(dx - ref_dx) <= 1e-4 * max(np.linalg.norm(ref_dx), 1e-6)


def test_input_only_backward(rng):
    net = random_net(rng, layernorm=True)
    x = rng.normal(size=(2, net.in_dim))
    _, cache = net.forward(x)
    dy = np.ones((2, net.out_dim))
    grads, dx = net.backward(cache, dy, params=False)
    assert grads == []
    np.testing.assert_allclose(dx, net.backward(cache, dy)[1])


def test_layernorm_shift_invariance(rng):
    # the normalized layer's output ignores a uniform shift of its pre-activations
    net = MlpNet([4, 5, 2], "tanh", layernorm=True, rng=rng)
    x = rng.normal(size=(1, 4))
    _, cache = net.forward(x)
    grads, _ = net.backward(cache, rng.normal(size=(1, 2)))
    # the first-layer bias gradient is the gradient w.r.t. pre-activations
    assert abs(grads[1].sum()) < 1e-12
    shifted = net.copy()
    shifted.layers[0].b += 3.7
    np.testing.assert_allclose(shifted(x), net(x), atol=1e-9)


def test_checkpoint_roundtrip(tmp_path, rng):
    net = random_net(rng, layernorm=True)
    net.save(tmp_path / "actor", extra={"kind": "gaussian"})
    loaded = MlpNet.load(tmp_path / "actor")
    x = rng.normal(size=(2, net.in_dim))
    np.testing.assert_array_equal(loaded(x), net(x))
    assert MlpNet.manifest(tmp_path / "actor")["extra"] == {"kind": "gaussian"}
    blob = (tmp_path / "actor.bin").read_bytes()
    assert len(blob) == 8 * sum(p.size for p in net.params())
    (tmp_path / "actor.bin").write_bytes(blob[:-8])
    with pytest.raises(ValueError):
        MlpNet.load(tmp_path / "actor")


def test_squashed_sample_zero_std_limit(rng):
    mean = np.array([0.3, -1.2])
    a, _, _, _ = sample_squashed_gaussian(GaussianPolicyOut(mean, np.full(2, LOG_STD_MIN)), rng)
    np.testing.assert_allclose(a, np.tanh(mean), atol=1e-3)


def test_squashed_sample_seeded():
    out = GaussianPolicyOut(np.zeros(3), np.zeros(3))
    a1 = sample_squashed_gaussian(out, np.random.default_rng(5))
    a2 = sample_squashed_gaussian(out, np.random.default_rng(5))
    np.testing.assert_array_equal(a1[0], a2[0])
    assert a1[1] == a2[1]


@given(st.floats(-3, 3), st.floats(-8, 2), st.integers(0, 2**32 - 1))
def test_squashed_actions_inside_box(mean, log_std, seed):
    out = GaussianPolicyOut(np.full(50, mean), np.full(50, log_std))
    a, logp, _, _ = sample_squashed_gaussian(out, np.random.default_rng(seed))
    assert np.all(np.abs(a) < 1)
    assert np.isfinite(logp)


def test_squashed_log_prob_matches_histogram():
    rng = np.random.default_rng(0)
    out = GaussianPolicyOut(np.array([[0.4]]).repeat(1_000_000, axis=0), np.full((1_000_000, 1), -0.5))
    a, logp, _, _ = sample_squashed_gaussian(out, rng)
    edges = np.linspace(-0.9, 0.98, 48)
    counts, _ = np.histogram(a[:, 0], bins=edges)
    density = counts / (a.shape[0] * np.diff(edges))
    centres = 0.5 * (edges[1:] + edges[:-1])
    model = np.exp(squashed_log_prob(GaussianPolicyOut(np.array([0.4]), np.array([-0.5])), centres[:, None]))
    # 5 sigma counting noise per bin
    sigma = np.sqrt(model / (a.shape[0] * np.diff(edges)))
    assert np.all(np.abs(density - model) <= 5 * sigma + 0.01 * model)
    # the sampler's own log-density agrees with the inverse evaluation
    back = squashed_log_prob(GaussianPolicyOut(out.mean[:100], out.log_std[:100]), a[:100])
    np.testing.assert_allclose(back, logp[:100], atol=1e-6)


def test_squashed_density_integrates_to_one():
    out = GaussianPolicyOut(np.array([0.7]), np.array([-0.3]))
    grid = np.linspace(-1, 1, 400_001)[1:-1]
    p = np.exp(squashed_log_prob(out, grid[:, None]))
    assert np.trapezoid(p, grid) == pytest.approx(1.0, abs=0.02)


def test_log_std_clamped():
    out = GaussianPolicyOut(np.zeros(2), np.array([-20.0, 9.0]))
    np.testing.assert_array_equal(out.log_std, [LOG_STD_MIN, LOG_STD_MAX])
    assert np.all(out.std > 0)


def test_gaussian_log_prob_standard_normal():
    assert gaussian_log_prob(np.zeros(1), np.zeros(1), np.zeros(1)) == pytest.approx(-0.5 * np.log(2 * np.pi))


def test_gaussian_entropy_values():
    assert gaussian_entropy([0.0]) == pytest.approx(1.41894, abs=1e-5)
    assert gaussian_entropy([np.log(2.0)]) - gaussian_entropy([0.0]) == pytest.approx(np.log(2))
    assert gaussian_entropy(np.zeros(7)) == pytest.approx(7 * gaussian_entropy([0.0]))


def test_adam_zero_gradient_keeps_params():
    p = [np.array([1.0, -2.0])]
    adam_step(p, [np.zeros(2)], AdamState(lr=0.1))
    np.testing.assert_array_equal(p[0], [1.0, -2.0])


def test_adam_first_step():
    g = np.array([0.5, -3.0, 1e-3])
    p = [np.zeros(3)]
    state = AdamState(lr=0.01)
    adam_step(p, [g], state)
    np.testing.assert_allclose(p[0], -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)
    assert state.t == 1
    assert state.m[0].shape == (3,)


def test_adam_deterministic_with_cloned_state(rng):
    p = [rng.normal(size=(2, 2))]
    state = AdamState()
    adam_step(p, [np.ones((2, 2))], state)
    p1, p2 = [p[0].copy()], [p[0].copy()]
    s1, s2 = state.copy(), state.copy()
    g = [rng.normal(size=(2, 2))]
    adam_step(p1, g, s1)
    adam_step(p2, g, s2)
    np.testing.assert_array_equal(p1[0], p2[0])


def test_adam_gradient_clipping():
    p = [np.zeros(2)]
    state = AdamState(lr=1.0)
    adam_step(p, [np.array([30.0, 40.0])], state, max_grad_norm=5.0)
    np.testing.assert_allclose(state.m[0], 0.1 * np.array([3.0, 4.0]))


def test_polyak_average(rng):
    a, b = MlpNet([2, 3, 1], rng=rng), MlpNet([2, 3, 1], rng=rng)
    before = [p.copy() for p in a.params()]
    polyak(a, b, 0.25)
    for pa, p0, pb in zip(a.params(), before, b.params()):
        np.testing.assert_allclose(pa, 0.75 * p0 + 0.25 * pb)
