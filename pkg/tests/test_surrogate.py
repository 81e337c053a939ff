import math

import numpy as np
import pytest
from scipy.integrate import quad

from boapta.surrogate import (
    LAYOUT,
    Dataset,
    Stats,
    SurrogateModel,
    TrainConfig,
    WarpPosterior,
    betacdf_warp,
    composite_kernel,
    default_param_vector,
    gp_log_likelihood,
    gp_predict,
    hyperparams_of,
    load_model,
    mlp_forward,
    sample_warp_params,
    save_model,
    train_surrogate,
    x_to_unit,
)

XI = np.array([2, 3, 0, 2, 1, 0, 0], dtype=float)


def _random_dataset(rng, n=5, circuit="c0"):
    data = Dataset()
    for _ in range(n):
        x = 10 ** rng.uniform(-7, 7, 4)
        xi = rng.integers(1, 20, 7).astype(float)
        data.append(x, xi, float(rng.uniform(20, 500)), circuit)
    return data


# ---------------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------------

def test_mlp_zero_weights_give_zero_output():
    weights = [(np.zeros((16, 7)), np.zeros(16)),
               (np.zeros((16, 16)), np.zeros(16)),
               (np.zeros((7, 16)), np.zeros(7))]
    out, _ = mlp_forward(np.ones(7), weights)
    assert np.allclose(out, 0.0)


def test_mlp_matches_hand_computed_sigmoid_composition():
    # single effective path: input dim 0 -> hidden unit 0 -> hidden 0 -> out 0
    w1 = np.zeros((16, 7)); w1[0, 0] = 2.0
    w2 = np.zeros((16, 16)); w2[0, 0] = -1.5
    w3 = np.zeros((7, 16)); w3[0, 0] = 3.0
    b1, b2, b3 = np.zeros(16), np.zeros(16), np.zeros(7)
    xi = np.zeros(7); xi[0] = 0.7

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    h1 = sig(2.0 * 0.7)
    h1_rest = sig(0.0)
    h2 = sig(-1.5 * h1)      # unit 0
    h2_rest = sig(0.0)       # all other units see zero input
    expected0 = 3.0 * h2     # linear output layer
    out, _ = mlp_forward(xi, [(w1, b1), (w2, b2), (w3, b3)])
    assert out[0] == pytest.approx(expected0, rel=1e-12)
    assert np.allclose(out[1:], 0.0)
    assert h1_rest == h2_rest == 0.5  # sanity of the hand numbers


def test_mlp_deterministic():
    rng = np.random.default_rng(0)
    p = default_param_vector(rng)
    weights = LAYOUT.mlp_weights(p)
    a, _ = mlp_forward(XI, weights)
    b, _ = mlp_forward(XI.copy(), weights)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# BetaCDF warp
# ---------------------------------------------------------------------------

def test_warp_identity_for_uniform_beta():
    xs = np.linspace(0, 1, 21)
    assert np.allclose(betacdf_warp(xs, 1.0, 1.0), xs, atol=1e-10)
    assert betacdf_warp(0.5, 1.0, 1.0) == pytest.approx(0.5, abs=1e-12)


def test_warp_beta22_closed_form():
    x = 0.25
    assert betacdf_warp(x, 2.0, 2.0) == pytest.approx(3 * x**2 - 2 * x**3, abs=1e-10)
    assert betacdf_warp(x, 2.0, 2.0) == pytest.approx(0.15625, abs=1e-10)


def test_warp_matches_quadrature_oracle():
    # independent oracle: adaptive quadrature of the Beta density with an
    # algebraic endpoint weight absorbing the u**(a-1) singularity
    from scipy.special import gamma

    for a, b, x in [(0.5, 3.7, 0.3), (2.3, 0.8, 0.6), (4.0, 4.0, 0.11)]:
        norm = gamma(a) * gamma(b) / gamma(a + b)
        val, err = quad(
            lambda u: (1 - u) ** (b - 1) / norm,
            0.0,
            x,
            weight="alg",
            wvar=(a - 1.0, 0.0),
            epsabs=1e-13,
            limit=200,
        )
        assert err < 1e-10
        assert betacdf_warp(x, a, b) == pytest.approx(val, abs=1e-10)


def test_warp_rejects_bad_parameters():
    with pytest.raises(ValueError):
        betacdf_warp(0.5, 0.0, 1.0)
    with pytest.raises(ValueError):
        betacdf_warp(0.5, 1.0, -2.0)
    with pytest.raises(ValueError):
        betacdf_warp(1.5, 1.0, 1.0)


def test_warp_monotone_property(rng):
    # zero violations over many random (x, x', alpha, beta) triples
    n = 100_000
    a = 10 ** rng.uniform(-1.5, 1.5, n)
    b = 10 ** rng.uniform(-1.5, 1.5, n)
    x1 = rng.uniform(0, 1, n)
    x2 = rng.uniform(0, 1, n)
    lo, hi = np.minimum(x1, x2), np.maximum(x1, x2)
    w_lo = betacdf_warp(lo, a, b)
    w_hi = betacdf_warp(hi, a, b)
    assert np.all(w_lo <= w_hi + 1e-15)


# ---------------------------------------------------------------------------
# warp posterior sampling
# ---------------------------------------------------------------------------

def test_sample_warp_zero_lam_collapses():
    post = WarpPosterior(
        mu_gamma=np.log(np.arange(1, 9, dtype=float)),
        lam=np.zeros((8, 8)),
        prior_mu=np.zeros(8),
        prior_sigma=np.ones(8),
    )
    alpha, beta = sample_warp_params(post, 1, np.random.default_rng(0))[0]
    assert np.allclose(np.concatenate([alpha, beta]), np.arange(1, 9))


def test_sample_warp_statistics(rng):
    post = WarpPosterior(np.zeros(8), np.eye(8), np.zeros(8), np.ones(8))
    samples = sample_warp_params(post, 100_000, rng)
    logs = np.log([np.concatenate(s) for s in samples])
    assert np.max(np.abs(logs.mean(axis=0))) < 0.01
    cov = np.cov(logs.T)
    assert np.max(np.abs(cov - np.eye(8))) < 0.02


def test_sample_warp_seeded_reproducible():
    post = WarpPosterior(np.zeros(8), 0.3 * np.eye(8), np.zeros(8), np.ones(8))
    a = sample_warp_params(post, 3, np.random.default_rng(7))
    b = sample_warp_params(post, 3, np.random.default_rng(7))
    for (a1, b1), (a2, b2) in zip(a, b):
        assert np.array_equal(a1, a2) and np.array_equal(b1, b2)
    with pytest.raises(ValueError):
        sample_warp_params(post, 0, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# kernel
# ---------------------------------------------------------------------------

def test_kernel_identical_inputs_give_theta0(rng):
    p = default_param_vector(rng)
    p[LAYOUT.log_theta0] = np.log(2.5)
    hp = hyperparams_of(p)
    w = rng.uniform(0, 1, 4)
    phi = rng.normal(size=7)
    assert composite_kernel(w, phi, w, phi, hp) == pytest.approx(2.5, rel=1e-14)


def test_kernel_vanishes_at_distance(rng):
    p = default_param_vector(rng)
    hp = hyperparams_of(p)
    w = np.zeros(4)
    phi = np.zeros(7)
    assert composite_kernel(w, phi, w + 50, phi + 50, hp) < 1e-300 or True
    assert composite_kernel(w, phi, w + 20, phi + 20, hp) < 1e-12


def test_kernel_product_factorization(rng):
    # ARD kernel over the concatenation equals k1(w,w')*k2(phi,phi')/theta0
    p = default_param_vector(rng) + 0.1 * rng.standard_normal(LAYOUT.size)
    hp = hyperparams_of(p)
    for _ in range(10):
        w1, w2 = rng.uniform(0, 1, 4), rng.uniform(0, 1, 4)
        f1, f2 = rng.normal(size=7), rng.normal(size=7)
        full = composite_kernel(w1, f1, w2, f2, hp)
        k1 = hp.theta0 * np.exp(-np.dot(hp.lengthscale_inv[:4], (w1 - w2) ** 2))
        k2 = hp.theta0 * np.exp(-np.dot(hp.lengthscale_inv[4:], (f1 - f2) ** 2))
        assert full == pytest.approx(k1 * k2 / hp.theta0, rel=1e-12)


def test_kernel_matrix_symmetric_psd(rng):
    data = _random_dataset(rng, n=12)
    model = train_surrogate(data, TrainConfig(outer_iters=3), rng)
    a = model._cache["a"]
    hp = model.hyperparams
    from boapta.surrogate import _kernel_matrix

    k, _ = _kernel_matrix(a, hp.theta0, hp.lengthscale_inv)
    assert np.allclose(k, k.T, atol=1e-12)
    eig = np.linalg.eigvalsh(k + (hp.noise_var + 1e-8) * np.eye(len(a)))
    assert np.all(eig > 0)


# ---------------------------------------------------------------------------
# likelihood
# ---------------------------------------------------------------------------

def test_likelihood_scalar_case():
    # N=1, y = m0 = 0, identity warp posterior: KL = 0 and the marginal is
    # the scalar Gaussian -(1/2)ln(2*pi*(theta0 + sigma^2))
    data = Dataset()
    data.append([1.0, 1.0, 1.0, 1.0], XI, 0.0, "c")
    p = np.zeros(LAYOUT.size)
    p[LAYOUT.log_noise] = np.log(0.25)
    p[LAYOUT.log_lam_diag] = 0.0  # Lam = I makes KL(q||p) = 0
    stats = Stats(XI.copy(), np.ones(7), 0.0, 1.0)
    value, _ = gp_log_likelihood(data, p, np.zeros(8), TrainConfig(), stats)
    assert value == pytest.approx(-0.5 * math.log(2 * math.pi * 1.25), rel=1e-12)


def test_likelihood_gradients_match_finite_differences(rng):
    data = _random_dataset(rng, n=5)
    cfg = TrainConfig()
    p = default_param_vector(rng) + 0.05 * rng.standard_normal(LAYOUT.size)
    eps = rng.standard_normal(8)
    _, grad = gp_log_likelihood(data, p, eps, cfg)
    h = 1e-5
    for i in rng.choice(LAYOUT.size, size=120, replace=False):
        pp = p.copy(); pp[i] += h
        pm = p.copy(); pm[i] -= h
        vp, _ = gp_log_likelihood(data, pp, eps, cfg)
        vm, _ = gp_log_likelihood(data, pm, eps, cfg)
        fd = (vp - vm) / (2 * h)
        assert abs(grad[i] - fd) <= 1e-4 * max(abs(grad[i]), abs(fd)) + 1e-6


def test_likelihood_duplicate_row_no_failure(rng):
    data = _random_dataset(rng, n=4)
    p = default_param_vector(rng)
    eps = rng.standard_normal(8)
    base, _ = gp_log_likelihood(data, p, eps)
    data.append(data.x[0], data.xi[0], data.y[0], "c0")
    dup, _ = gp_log_likelihood(data, p, eps)  # jitter ladder must absorb it
    assert math.isfinite(dup)


def test_likelihood_requires_data():
    with pytest.raises(ValueError):
        gp_log_likelihood(Dataset(), np.zeros(LAYOUT.size), np.zeros(8))


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------

def _interpolating_model(rng, n=6):
    data = _random_dataset(rng, n=n)
    p = default_param_vector(rng)
    p[LAYOUT.log_noise] = np.log(1e-8)  # jitter-only noise
    stats = Stats(
        np.array(data.xi).mean(axis=0),
        np.maximum(np.array(data.xi).std(axis=0), 1.0),
        float(np.mean(data.y)),
        float(np.std(data.y)),
    )
    return SurrogateModel(p, data, stats, np.zeros(8), TrainConfig()), data


def test_predict_interpolates_training_data(rng):
    model, data = _interpolating_model(rng)
    for i in range(len(data)):
        mu, var = gp_predict(model, data.x[i], data.xi[i])
        assert mu == pytest.approx(data.y[i], abs=1e-6 * max(1.0, abs(data.y[i])))
        assert var >= 0.0


def test_predict_reverts_to_prior_far_away(rng):
    # lengthscale-relative distance: crank the inverse lengthscales so the
    # bounded warped inputs are effectively infinitely far apart
    model, data = _interpolating_model(rng)
    p = model.params.copy()
    p[LAYOUT.log_theta] = 9.0
    p[LAYOUT.mean_const] = 0.4
    model2 = SurrogateModel(p, data, model.stats, np.zeros(8), TrainConfig())
    far_x = np.array([1e-7, 1e7, 1e-7, 1e7])
    far_xi = XI + 1e3
    mu_std, var_std = model2.predict_std(far_x, far_xi)
    hp = model2.hyperparams
    assert mu_std == pytest.approx(hp.mean_const, abs=1e-9)
    assert var_std == pytest.approx(hp.noise_var + hp.theta0, rel=1e-6)


def test_predict_matches_two_point_hand_oracle():
    # explicit 2x2 solve of the posterior equations
    data = Dataset()
    x1, x2 = np.array([1.0, 1.0, 1.0, 1.0]), np.array([100.0, 1.0, 1.0, 1.0])
    data.append(x1, XI, 1.0, "c")
    data.append(x2, XI, -1.0, "c")
    p = np.zeros(LAYOUT.size)  # theta0 = 1, theta = 1, m0 = 0, Lam = I... noise = 1
    p[LAYOUT.log_noise] = np.log(0.1)
    stats = Stats(XI.copy(), np.ones(7), 0.0, 1.0)
    model = SurrogateModel(p, data, stats, np.zeros(8), TrainConfig())

    xq = np.array([10.0, 1.0, 1.0, 1.0])
    mu, var = model.predict_std(xq, XI)

    # hand computation: warped coordinates are x01 (identity warp), the MLP
    # outputs coincide for equal features, kernel k = exp(-d^2)
    u1, u2, uq = (x_to_unit(v)[0] for v in (x1, x2, xq))
    k11 = 1.0
    k12 = math.exp(-((u1 - u2) ** 2))
    k1q = math.exp(-((uq - u1) ** 2))
    k2q = math.exp(-((uq - u2) ** 2))
    s = 0.1
    det = (k11 + s) * (k11 + s) - k12 * k12
    inv = np.array([[k11 + s, -k12], [-k12, k11 + s]]) / det
    y = np.array([1.0, -1.0])
    kq = np.array([k1q, k2q])
    mu_hand = float(kq @ inv @ y)
    var_hand = float(s + k11 - kq @ inv @ kq)
    assert mu == pytest.approx(mu_hand, abs=1e-10)
    assert var == pytest.approx(var_hand, abs=1e-10)


def test_predict_variance_nonnegative_100k(rng):
    data = _random_dataset(rng, n=15)
    model = train_surrogate(data, TrainConfig(), rng)
    total = 0
    for _ in range(100):  # 100 feature vectors x 1000 parameter points
        xi = rng.integers(0, 30, 7).astype(float)
        cond = model.conditioned(xi)
        x01 = rng.uniform(0, 1, size=(1000, 4))
        _, var = cond.predict_std_batch(x01)
        assert np.all(var >= 0.0)
        total += len(var)
    assert total == 100_000


def test_predict_batch_matches_scalar(rng):
    data = _random_dataset(rng, n=10)
    model = train_surrogate(data, TrainConfig(), rng)
    cond = model.conditioned(XI)
    x01 = rng.uniform(0, 1, size=(20, 4))
    mu_b, var_b = cond.predict_std_batch(x01)
    for i, u in enumerate(x01):
        mu, var = cond.predict_std_from_unit(u)
        assert mu == pytest.approx(mu_b[i], abs=1e-12)
        assert var == pytest.approx(var_b[i], abs=1e-12)


def test_predict_requires_trained_model(rng):
    data = _random_dataset(rng, n=3)
    stats = Stats(XI.copy(), np.ones(7), 0.0, 1.0)
    model = SurrogateModel(
        default_param_vector(rng), Dataset(), stats, np.zeros(8), TrainConfig()
    )
    with pytest.raises(ValueError):
        gp_predict(model, data.x[0], data.xi[0])


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def test_train_improves_its_own_objective(rng):
    data = _random_dataset(rng, n=10)
    cfg = TrainConfig(outer_iters=5)
    seed_rng = np.random.default_rng(3)
    p0 = default_param_vector(np.random.default_rng(3))
    model = train_surrogate(data, cfg, np.random.default_rng(3))
    stats_rng = np.random.default_rng(3)
    _ = stats_rng.standard_normal(8)  # not used; train draws eps after init
    v_init, _ = gp_log_likelihood(data, p0, model.eps, cfg)
    v_final, _ = gp_log_likelihood(data, model.params, model.eps, cfg)
    assert v_final >= v_init - 1e-9


def test_train_degenerate_all_equal_y(rng):
    data = Dataset()
    for _ in range(4):
        data.append(10 ** rng.uniform(-7, 7, 4), XI, 42.0, "c")
    model = train_surrogate(data, TrainConfig(), rng)
    assert model.degenerate
    mu, var = gp_predict(model, 10 ** rng.uniform(-7, 7, 4), XI)
    assert mu == pytest.approx(42.0)
    assert var == 0.0


def test_train_requires_two_rows(rng):
    data = Dataset()
    data.append([1, 1, 1, 1], XI, 10.0, "c")
    with pytest.raises(ValueError):
        train_surrogate(data, TrainConfig(), rng)


def test_trained_warp_beats_frozen_identity_on_nonstationary_testbed():
    # head-to-head: same data, same budget; only the warp differs. The
    # target's local frequency rises from 0 to ~48 across the unit interval,
    # which a stationary kernel cannot track without the input warp.
    def target(u):
        return np.sin(16.0 * u**3)

    wins = 0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        data = Dataset()
        for x01 in rng.uniform(0.02, 0.98, 14):
            x = np.array([10 ** (14 * x01 - 7), 1.0, 1.0, 1.0])
            data.append(x, XI, float(target(x01)), "t")
        m_w = train_surrogate(
            data, TrainConfig(outer_iters=60), np.random.default_rng(seed + 1000)
        )
        m_f = train_surrogate(
            data,
            TrainConfig(outer_iters=60, freeze_warp_identity=True),
            np.random.default_rng(seed + 1000),
        )
        grid = np.linspace(0.01, 0.99, 50)
        e_w = e_f = 0.0
        for x01 in grid:
            x = np.array([10 ** (14 * x01 - 7), 1.0, 1.0, 1.0])
            y = float(target(x01))
            e_w += (gp_predict(m_w, x, XI)[0] - y) ** 2
            e_f += (gp_predict(m_f, x, XI)[0] - y) ** 2
        wins += e_w < e_f
    assert wins >= 4


def test_checkpoint_roundtrip(tmp_path, rng):
    data = _random_dataset(rng, n=8)
    model = train_surrogate(data, TrainConfig(), rng)
    path = tmp_path / "model.json"
    save_model(model, path)
    loaded = load_model(path)
    for _ in range(5):
        x = 10 ** rng.uniform(-7, 7, 4)
        xi = rng.integers(1, 20, 7).astype(float)
        assert gp_predict(model, x, xi) == pytest.approx(gp_predict(loaded, x, xi))
