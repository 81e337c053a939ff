"""Gaussian-process surrogate over (warped solver parameters, MLP features).

The model maps the 4 solver parameters to [0,1] in log10 space, warps each
dimension through a Beta CDF whose (alpha, beta) follow a log-Gaussian
variational posterior (reparameterized, S=1 sample per training call), and
passes the 7 netlist descriptors through a small sigmoid MLP. An ARD
squared-exponential kernel over the concatenated 11-dim input defines an
exact GP whose marginal likelihood, minus the KL term of the variational
posterior, is maximized jointly over all parameters with a bounded
quasi-Newton optimizer (a handful of iterations per optimization round).

All gradients are closed-form chain rule; the one leaf without an
elementary form, d/d(alpha) of the regularized incomplete beta, uses
high-accuracy central differences on the special function itself.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize
from scipy.special import betainc, expit

__all__ = [
    "PENALTY_Y",
    "Dataset",
    "GpHyperparams",
    "MlpWeights",
    "WarpPosterior",
    "SurrogateModel",
    "TrainConfig",
    "mlp_forward",
    "betacdf_warp",
    "sample_warp_params",
    "composite_kernel",
    "gp_log_likelihood",
    "gp_predict",
    "train_surrogate",
    "x_to_unit",
    "save_model",
    "load_model",
]

PENALTY_Y = 9999.0

D_X = 4          # solver-parameter dimensions (warped)
D_XI = 7         # netlist feature dimensions (MLP in = out)
D_KERNEL = D_X + D_XI
MLP_WIDTHS = (D_XI, 16, 16, D_XI)
N_GAMMA = 2 * D_X

_JITTER_LADDER = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


def x_to_unit(x: np.ndarray) -> np.ndarray:
    """Map raw solver parameters in [1e-7, 1e7] to [0,1] in log10 space."""
    return np.clip((np.log10(np.asarray(x, dtype=float)) + 7.0) / 14.0, 0.0, 1.0)


# ---------------------------------------------------------------------------
# parameter layout
# ---------------------------------------------------------------------------

def _mlp_sizes():
    sizes = []
    for fan_in, fan_out in zip(MLP_WIDTHS[:-1], MLP_WIDTHS[1:]):
        sizes.append((fan_out, fan_in))
    return sizes


class ParamLayout:
    """Slices of the flat trainable vector; one instance is shared."""

    def __init__(self):
        idx = 0

        def take(n):
            nonlocal idx
            s = slice(idx, idx + n)
            idx += n
            return s

        self.log_theta0 = take(1)
        self.log_theta = take(D_KERNEL)
        self.mean_const = take(1)
        self.log_noise = take(1)
        self.mlp = []
        for rows, cols in _mlp_sizes():
            self.mlp.append((take(rows * cols), take(rows), (rows, cols)))
        self.mu_gamma = take(N_GAMMA)
        self.log_lam_diag = take(N_GAMMA)
        self.lam_off = take(N_GAMMA * (N_GAMMA - 1) // 2)
        self.size = idx

        self._tril_rows, self._tril_cols = np.tril_indices(N_GAMMA, k=-1)

    def unpack_lam(self, p: np.ndarray) -> np.ndarray:
        lam = np.zeros((N_GAMMA, N_GAMMA))
        lam[np.arange(N_GAMMA), np.arange(N_GAMMA)] = np.exp(p[self.log_lam_diag])
        lam[self._tril_rows, self._tril_cols] = p[self.lam_off]
        return lam

    def mlp_weights(self, p: np.ndarray):
        out = []
        for wsl, bsl, shape in self.mlp:
            out.append((p[wsl].reshape(shape), p[bsl]))
        return out


LAYOUT = ParamLayout()


def default_param_vector(rng: np.random.Generator) -> np.ndarray:
    """Fresh initialization: unit kernel scales, small random MLP weights."""
    p = np.zeros(LAYOUT.size)
    p[LAYOUT.log_noise] = np.log(1e-4)
    for wsl, bsl, (rows, cols) in LAYOUT.mlp:
        p[wsl] = rng.normal(0.0, 1.0 / np.sqrt(cols), rows * cols)
    p[LAYOUT.log_lam_diag] = np.log(0.1)
    return p


def _param_bounds(freeze_warp: bool = False) -> list[tuple[float | None, float | None]]:
    bounds: list[tuple[float | None, float | None]] = [(None, None)] * LAYOUT.size
    for i in range(*LAYOUT.log_theta0.indices(LAYOUT.size)):
        bounds[i] = (-10.0, 10.0)
    for i in range(*LAYOUT.log_theta.indices(LAYOUT.size)):
        bounds[i] = (-10.0, 10.0)
    for i in range(*LAYOUT.mean_const.indices(LAYOUT.size)):
        bounds[i] = (-10.0, 10.0)
    for i in range(*LAYOUT.log_noise.indices(LAYOUT.size)):
        bounds[i] = (np.log(1e-8), np.log(10.0))
    for i in range(*LAYOUT.mu_gamma.indices(LAYOUT.size)):
        bounds[i] = (0.0, 0.0) if freeze_warp else (-4.0, 4.0)
    for i in range(*LAYOUT.log_lam_diag.indices(LAYOUT.size)):
        bounds[i] = (-8.0, -8.0) if freeze_warp else (-8.0, 2.0)
    for i in range(*LAYOUT.lam_off.indices(LAYOUT.size)):
        bounds[i] = (0.0, 0.0) if freeze_warp else (-4.0, 4.0)
    return bounds


# ---------------------------------------------------------------------------
# spec domain types (views over the flat vector)
# ---------------------------------------------------------------------------

@dataclass
class GpHyperparams:
    theta0: float
    lengthscale_inv: np.ndarray  # one positive weight per kernel dimension
    mean_const: float
    noise_var: float


@dataclass
class MlpWeights:
    layers: list[tuple[np.ndarray, np.ndarray]]


@dataclass
class WarpPosterior:
    mu_gamma: np.ndarray
    lam: np.ndarray  # lower-triangular factor of Sigma_gamma
    prior_mu: np.ndarray
    prior_sigma: np.ndarray


def hyperparams_of(p: np.ndarray) -> GpHyperparams:
    return GpHyperparams(
        theta0=float(np.exp(p[LAYOUT.log_theta0][0])),
        lengthscale_inv=np.exp(p[LAYOUT.log_theta]),
        mean_const=float(p[LAYOUT.mean_const][0]),
        noise_var=float(np.exp(p[LAYOUT.log_noise][0])),
    )


def warp_posterior_of(p: np.ndarray, prior_mu=None, prior_sigma=None) -> WarpPosterior:
    return WarpPosterior(
        mu_gamma=p[LAYOUT.mu_gamma].copy(),
        lam=LAYOUT.unpack_lam(p),
        prior_mu=np.zeros(N_GAMMA) if prior_mu is None else prior_mu,
        prior_sigma=np.ones(N_GAMMA) if prior_sigma is None else prior_sigma,
    )


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """Raw observation rows; standardization happens inside the model."""

    x: list = field(default_factory=list)         # (4,) raw solver params
    xi: list = field(default_factory=list)        # (7,) raw features
    y: list = field(default_factory=list)         # iteration counts
    circuit_ids: list = field(default_factory=list)

    def append(self, x, xi, y, circuit_id: str = "") -> None:
        y = float(y)
        if not np.isfinite(y):
            raise ValueError("y must be finite")
        self.x.append(np.asarray(x, dtype=float))
        self.xi.append(np.asarray(xi, dtype=float))
        self.y.append(y)
        self.circuit_ids.append(circuit_id)

    def __len__(self) -> int:
        return len(self.y)

    def arrays(self):
        return (
            np.array(self.x, dtype=float).reshape(len(self), D_X),
            np.array(self.xi, dtype=float).reshape(len(self), D_XI),
            np.array(self.y, dtype=float),
        )

    def penalty_mask(self) -> np.ndarray:
        return np.array([y >= PENALTY_Y for y in self.y])

    def best_for(self, circuit_id: str):
        """(x, y) of the lowest finite y recorded for one circuit."""
        best = None
        for x, y, cid in zip(self.x, self.y, self.circuit_ids):
            if cid == circuit_id and (best is None or y < best[1]):
                best = (x, y)
        return best


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------

def _sigmoid(z):
    return expit(z)


def mlp_forward(xi_std: np.ndarray, weights: list[tuple[np.ndarray, np.ndarray]]):
    """Forward pass; sigmoid hidden layers, linear output layer.

    Accepts a single (7,) vector or an (N,7) batch. Returns the output and
    the per-layer activations needed for backprop.
    """
    a = np.atleast_2d(np.asarray(xi_std, dtype=float))
    acts = [a]
    n_layers = len(weights)
    for li, (w, b) in enumerate(weights):
        z = a @ w.T + b
        a = z if li == n_layers - 1 else _sigmoid(z)
        acts.append(a)
    return (a[0] if np.ndim(xi_std) == 1 else a), acts


def betacdf_warp(x01, alpha, beta) -> np.ndarray | float:
    """Regularized incomplete beta I_x(alpha, beta); monotone bijection on [0,1]."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if np.any(alpha <= 0) or np.any(beta <= 0):
        raise ValueError("alpha and beta must be positive")
    x = np.asarray(x01, dtype=float)
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError("x01 must lie in [0, 1]")
    out = betainc(alpha, beta, x)
    return float(out) if np.ndim(x01) == 0 and np.ndim(alpha) == 0 else out


def _warp_param_derivs(x01: np.ndarray, alpha: np.ndarray, beta: np.ndarray):
    """d I_x(a,b) / da and /db via central differences on the special function.

    Relative step 1e-6 keeps the error around 1e-10, far below the 1e-4
    tolerance of the full-gradient finite-difference checks.
    """
    ha = 1e-6 * np.maximum(alpha, 1e-3)
    hb = 1e-6 * np.maximum(beta, 1e-3)
    da = (betainc(alpha + ha, beta, x01) - betainc(alpha - ha, beta, x01)) / (2 * ha)
    db = (betainc(alpha, beta + hb, x01) - betainc(alpha, beta - hb, x01)) / (2 * hb)
    return da, db


def sample_warp_params(
    post: WarpPosterior, s: int, rng: np.random.Generator
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Draw S reparameterized (alpha, beta) samples: gamma = exp(mu + Lam @ eps)."""
    if s < 1:
        raise ValueError("s must be >= 1")
    out = []
    for _ in range(s):
        eps = rng.standard_normal(N_GAMMA)
        gamma = np.exp(post.mu_gamma + post.lam @ eps)
        out.append((gamma[:D_X], gamma[D_X:]))
    return out


def composite_kernel(w, phi, w2, phi2, hp: GpHyperparams) -> float:
    """ARD kernel over the concatenated [warped x, MLP features] input."""
    a = np.concatenate([np.asarray(w, float), np.asarray(phi, float)])
    b = np.concatenate([np.asarray(w2, float), np.asarray(phi2, float)])
    d2 = (a - b) ** 2
    return float(hp.theta0 * np.exp(-np.dot(hp.lengthscale_inv, d2)))


def _kernel_matrix(a: np.ndarray, theta0: float, theta: np.ndarray):
    diff = a[:, None, :] - a[None, :, :]
    d2 = diff * diff
    k = theta0 * np.exp(-np.einsum("ijd,d->ij", d2, theta))
    return k, d2


def _kernel_cross(a_star: np.ndarray, a: np.ndarray, theta0: float, theta: np.ndarray):
    d2 = (a_star[None, :] - a) ** 2
    return theta0 * np.exp(-(d2 @ theta))


# ---------------------------------------------------------------------------
# likelihood and gradients
# ---------------------------------------------------------------------------

def _chol_with_jitter(a_mat: np.ndarray):
    for jit in _JITTER_LADDER:
        try:
            cf = cho_factor(a_mat + jit * np.eye(a_mat.shape[0]), lower=True)
            return cf, jit
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError(
        "kernel matrix not positive definite even at jitter 1e-4"
    )


def _forward_inputs(p: np.ndarray, x01: np.ndarray, xi_std: np.ndarray, eps: np.ndarray):
    """Warped+featurized kernel inputs A (N,11) plus backprop intermediates."""
    gamma = np.exp(p[LAYOUT.mu_gamma] + LAYOUT.unpack_lam(p) @ eps)
    alpha, beta = gamma[:D_X], gamma[D_X:]
    w = betainc(alpha[None, :], beta[None, :], x01)
    phi, acts = mlp_forward(xi_std, LAYOUT.mlp_weights(p))
    a = np.concatenate([w, np.atleast_2d(phi)], axis=1)
    return a, gamma, acts


def _kl_and_grad(p: np.ndarray, prior_mu: np.ndarray, prior_sigma: np.ndarray):
    """KL(q || p) between log-space Gaussians, plus gradients."""
    mu = p[LAYOUT.mu_gamma]
    lam = LAYOUT.unpack_lam(p)
    var_p = prior_sigma**2
    sig_q_diag = np.sum(lam * lam, axis=1)
    log_det_q = 2.0 * np.sum(np.log(np.diag(lam)))
    kl = 0.5 * (
        np.sum(sig_q_diag / var_p)
        + np.sum((prior_mu - mu) ** 2 / var_p)
        - N_GAMMA
        + np.sum(np.log(var_p))
        - log_det_q
    )
    g_mu = (mu - prior_mu) / var_p
    g_lam = lam / var_p[:, None]
    g_lam_diag_log = (np.diag(g_lam) - 1.0 / np.diag(lam)) * np.diag(lam)
    g_off = g_lam[LAYOUT._tril_rows, LAYOUT._tril_cols]
    return kl, g_mu, g_lam_diag_log, g_off


def _nll_and_grad(
    p: np.ndarray,
    x01: np.ndarray,
    xi_std: np.ndarray,
    y_std: np.ndarray,
    eps: np.ndarray,
    prior_mu: np.ndarray,
    prior_sigma: np.ndarray,
):
    """Negative penalized log likelihood and its gradient w.r.t. p."""
    n = len(y_std)
    theta0 = float(np.exp(p[LAYOUT.log_theta0][0]))
    theta = np.exp(p[LAYOUT.log_theta])
    m0 = float(p[LAYOUT.mean_const][0])
    noise = float(np.exp(p[LAYOUT.log_noise][0]))

    a_in, gamma, acts = _forward_inputs(p, x01, xi_std, eps)
    k_mat, d2 = _kernel_matrix(a_in, theta0, theta)
    cf, _ = _chol_with_jitter(k_mat + noise * np.eye(n))
    r = y_std - m0
    alpha_v = cho_solve(cf, r)
    log_det = 2.0 * np.sum(np.log(np.diag(cf[0])))
    ll = -0.5 * float(r @ alpha_v) - 0.5 * log_det - 0.5 * n * np.log(2 * np.pi)

    kl, g_kl_mu, g_kl_lam_diag, g_kl_off = _kl_and_grad(p, prior_mu, prior_sigma)
    value = ll - kl

    # dL/dK = 0.5 (vv^T - K^-1)
    k_inv = cho_solve(cf, np.eye(n))
    s_bar = 0.5 * (np.outer(alpha_v, alpha_v) - k_inv)

    grad = np.zeros(LAYOUT.size)
    grad[LAYOUT.log_theta0] = np.sum(s_bar * k_mat)
    wd2 = np.einsum("ij,ijd->d", s_bar * k_mat, d2)
    grad[LAYOUT.log_theta] = -wd2 * theta
    grad[LAYOUT.mean_const] = float(np.sum(alpha_v))
    grad[LAYOUT.log_noise] = float(np.trace(s_bar)) * noise

    # input gradients dL/dA
    m = s_bar * k_mat
    row = np.sum(m, axis=1)
    da = -4.0 * theta[None, :] * (a_in * row[:, None] - m @ a_in)
    dw = da[:, :D_X]
    dphi = da[:, D_X:]

    # MLP backprop (hidden sigmoid, linear output)
    weights = LAYOUT.mlp_weights(p)
    delta = dphi
    for li in range(len(weights) - 1, -1, -1):
        w_l, _ = weights[li]
        a_prev = acts[li]
        wsl, bsl, shape = LAYOUT.mlp[li]
        grad[wsl] = (delta.T @ a_prev).ravel()
        grad[bsl] = np.sum(delta, axis=0)
        if li > 0:
            back = delta @ w_l
            delta = back * acts[li] * (1.0 - acts[li])

    # warp posterior chain: gamma = exp(mu + Lam eps)
    alpha, beta = gamma[:D_X], gamma[D_X:]
    d_ia, d_ib = _warp_param_derivs(x01, alpha[None, :], beta[None, :])
    g_gamma = np.concatenate(
        [np.sum(dw * d_ia, axis=0), np.sum(dw * d_ib, axis=0)]
    )
    g_pre = g_gamma * gamma  # d gamma_k/d(mu_k + (Lam eps)_k) = gamma_k
    grad[LAYOUT.mu_gamma] = g_pre - g_kl_mu
    lam = LAYOUT.unpack_lam(p)
    g_lam_full = np.outer(g_pre, eps)
    grad[LAYOUT.log_lam_diag] = (
        np.diag(g_lam_full) * np.diag(lam) - g_kl_lam_diag
    )
    grad[LAYOUT.lam_off] = (
        g_lam_full[LAYOUT._tril_rows, LAYOUT._tril_cols] - g_kl_off
    )

    return -value, -grad


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass
class Stats:
    xi_mean: np.ndarray
    xi_std: np.ndarray
    y_mean: float
    y_std: float


def _compute_stats(xi: np.ndarray, y: np.ndarray) -> Stats:
    xi_std = xi.std(axis=0)
    xi_std[xi_std < 1e-12] = 1.0
    y_std = float(y.std())
    return Stats(xi.mean(axis=0), xi_std, float(y.mean()), y_std)


@dataclass
class TrainConfig:
    outer_iters: int = 5
    warp_samples: int = 1
    prior_mu: np.ndarray = field(default_factory=lambda: np.zeros(N_GAMMA))
    prior_sigma: np.ndarray = field(default_factory=lambda: np.ones(N_GAMMA))
    # pin the warp at the exact identity (alpha = beta = 1, no sampling);
    # used by ablation experiments
    freeze_warp_identity: bool = False


class SurrogateModel:
    """A trained snapshot: flat parameters plus cached factorization."""

    def __init__(
        self,
        params: np.ndarray,
        data: Dataset,
        stats: Stats,
        eps: np.ndarray,
        config: TrainConfig,
        degenerate: bool = False,
    ):
        self.params = params
        self.data = data
        self.stats = stats
        self.eps = eps
        self.config = config
        self.degenerate = degenerate
        self._cache = None
        if not degenerate and len(data) > 0:
            self._build_cache()

    # views
    @property
    def hyperparams(self) -> GpHyperparams:
        return hyperparams_of(self.params)

    @property
    def mlp(self) -> MlpWeights:
        return MlpWeights(LAYOUT.mlp_weights(self.params))

    @property
    def warp(self) -> WarpPosterior:
        return warp_posterior_of(
            self.params, self.config.prior_mu, self.config.prior_sigma
        )

    @property
    def gamma_hat(self) -> np.ndarray:
        post = self.warp
        return np.exp(post.mu_gamma + post.lam @ self.eps)

    def _standardize(self, x_raw, xi_raw, y_raw):
        x01 = x_to_unit(x_raw)
        xi_std = (xi_raw - self.stats.xi_mean) / self.stats.xi_std
        y_std = (y_raw - self.stats.y_mean) / self.stats.y_std
        return x01, xi_std, y_std

    def _build_cache(self):
        x_raw, xi_raw, y_raw = self.data.arrays()
        x01, xi_std, y_std = self._standardize(x_raw, xi_raw, y_raw)
        a_in, _, _ = _forward_inputs(self.params, x01, xi_std, self.eps)
        hp = self.hyperparams
        k_mat, _ = _kernel_matrix(a_in, hp.theta0, hp.lengthscale_inv)
        cf, jit = _chol_with_jitter(k_mat + hp.noise_var * np.eye(len(y_std)))
        r = y_std - hp.mean_const
        self._cache = {
            "a": a_in,
            "cf": cf,
            "alpha_v": cho_solve(cf, r),
            "noise": hp.noise_var + jit,
        }

    def warp_point(self, x_raw) -> np.ndarray:
        """Warped coordinates of one raw solver-parameter vector."""
        gamma = self.gamma_hat
        return betainc(gamma[:D_X], gamma[D_X:], x_to_unit(x_raw))

    def features_point(self, xi_raw) -> np.ndarray:
        xi_std = (np.asarray(xi_raw, float) - self.stats.xi_mean) / self.stats.xi_std
        phi, _ = mlp_forward(xi_std, LAYOUT.mlp_weights(self.params))
        return phi

    def predict_std(self, x_raw, xi_raw) -> tuple[float, float]:
        """Posterior mean/variance in standardized-y units."""
        if self.degenerate or self._cache is None:
            return 0.0, 0.0
        a_star = np.concatenate([self.warp_point(x_raw), self.features_point(xi_raw)])
        return self._predict_from_a(a_star)

    def _predict_from_a(self, a_star: np.ndarray) -> tuple[float, float]:
        hp = self.hyperparams
        cache = self._cache
        k_vec = _kernel_cross(a_star, cache["a"], hp.theta0, hp.lengthscale_inv)
        mu = hp.mean_const + float(k_vec @ cache["alpha_v"])
        v = cache["noise"] + hp.theta0 - float(k_vec @ cho_solve(cache["cf"], k_vec))
        return mu, max(v, 0.0)

    def conditioned(self, xi_raw) -> "ConditionedPredictor":
        """Fix the netlist features; precompute their kernel factor once."""
        return ConditionedPredictor(self, xi_raw)

    def standardize_y(self, y_raw: float) -> float:
        return (y_raw - self.stats.y_mean) / self.stats.y_std


class ConditionedPredictor:
    """Posterior over solver parameters for one fixed netlist.

    Exploits the product structure of the ARD kernel: the feature factor
    k2(phi*, phi_i) is computed once, and each candidate evaluation only
    recomputes the warped-parameter factor.
    """

    def __init__(self, model: SurrogateModel, xi_raw):
        self.model = model
        hp = model.hyperparams
        self.theta_x = hp.lengthscale_inv[:D_X]
        self.theta0 = hp.theta0
        self.mean_const = hp.mean_const
        cache = model._cache
        self.a_train_w = cache["a"][:, :D_X]
        phi_star = model.features_point(xi_raw)
        d2 = (phi_star[None, :] - cache["a"][:, D_X:]) ** 2
        self.k2_factor = np.exp(-(d2 @ hp.lengthscale_inv[D_X:]))
        self.alpha_v = cache["alpha_v"]
        self.cf = cache["cf"]
        self.noise = cache["noise"]
        gamma = model.gamma_hat
        self.warp_alpha, self.warp_beta = gamma[:D_X], gamma[D_X:]

    def warp(self, x01: np.ndarray) -> np.ndarray:
        return betainc(self.warp_alpha, self.warp_beta, x01)

    def predict_std_from_unit(self, x01: np.ndarray) -> tuple[float, float]:
        w = self.warp(np.asarray(x01, float))
        d2 = (w[None, :] - self.a_train_w) ** 2
        k_vec = self.theta0 * np.exp(-(d2 @ self.theta_x)) * self.k2_factor
        mu = self.mean_const + float(k_vec @ self.alpha_v)
        v = self.noise + self.theta0 - float(k_vec @ cho_solve(self.cf, k_vec))
        return mu, max(v, 0.0)

    def predict_std_batch(self, x01s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized posterior over a (n, 4) batch of unit-space points."""
        x01s = np.atleast_2d(np.asarray(x01s, float))
        w = betainc(self.warp_alpha[None, :], self.warp_beta[None, :], x01s)
        d2 = (w[:, None, :] - self.a_train_w[None, :, :]) ** 2
        k = self.theta0 * np.exp(-(d2 @ self.theta_x)) * self.k2_factor[None, :]
        mu = self.mean_const + k @ self.alpha_v
        v = self.noise + self.theta0 - np.sum(k * cho_solve(self.cf, k.T).T, axis=1)
        return mu, np.maximum(v, 0.0)


def gp_log_likelihood(
    data: Dataset,
    params: np.ndarray,
    eps: np.ndarray,
    config: TrainConfig | None = None,
    stats: Stats | None = None,
):
    """Penalized log likelihood (marginal GP term minus KL) and its gradient."""
    if len(data) < 1:
        raise ValueError("need at least one observation")
    config = config or TrainConfig()
    x_raw, xi_raw, y_raw = data.arrays()
    if stats is None:
        stats = _compute_stats(xi_raw, y_raw)
    x01 = x_to_unit(x_raw)
    xi_std = (xi_raw - stats.xi_mean) / stats.xi_std
    sy = stats.y_std if stats.y_std > 1e-12 else 1.0
    y_std = (y_raw - stats.y_mean) / sy
    nll, ngrad = _nll_and_grad(
        params, x01, xi_std, y_std, eps, config.prior_mu, config.prior_sigma
    )
    return -nll, -ngrad


def gp_predict(model: SurrogateModel, x_raw, xi_raw) -> tuple[float, float]:
    """Posterior mean and variance in raw objective units.

    With the cached Cholesky factor a query costs O(N) for the mean and
    O(N^2) for the variance; training itself is O(N^3) per iteration.
    """
    if model._cache is None and not model.degenerate:
        raise ValueError("model is untrained")
    mu, v = model.predict_std(x_raw, xi_raw)
    sy = model.stats.y_std if model.stats.y_std > 1e-12 else 1.0
    return model.stats.y_mean + sy * mu, v * sy * sy


def train_surrogate(
    data: Dataset,
    config: TrainConfig | None = None,
    rng: np.random.Generator | None = None,
    init_model: SurrogateModel | None = None,
) -> SurrogateModel:
    """Joint quasi-Newton update of kernel, MLP and warp posterior.

    Runs a bounded L-BFGS-B for ``config.outer_iters`` iterations from the
    previous model's parameters (warm start) or a fresh initialization.
    """
    if len(data) < 2:
        raise ValueError("need at least two observations to train")
    config = config or TrainConfig()
    rng = rng or np.random.default_rng(0)
    x_raw, xi_raw, y_raw = data.arrays()
    stats = _compute_stats(xi_raw, y_raw)
    if stats.y_std <= 1e-12:
        # all-equal objective: constant-mean model, kernel untouched
        params = (
            init_model.params.copy()
            if init_model is not None
            else default_param_vector(rng)
        )
        return SurrogateModel(
            params, data, stats, np.zeros(N_GAMMA), config, degenerate=True
        )

    eps = rng.standard_normal(N_GAMMA) if config.warp_samples >= 1 else np.zeros(N_GAMMA)
    x01 = x_to_unit(x_raw)
    xi_std = (xi_raw - stats.xi_mean) / stats.xi_std
    y_std = (y_raw - stats.y_mean) / stats.y_std

    p0 = (
        init_model.params.copy()
        if init_model is not None
        else default_param_vector(rng)
    )
    if config.freeze_warp_identity:
        eps = np.zeros(N_GAMMA)
        p0[LAYOUT.mu_gamma] = 0.0
        p0[LAYOUT.log_lam_diag] = -8.0
        p0[LAYOUT.lam_off] = 0.0
    res = minimize(
        _nll_and_grad,
        p0,
        args=(x01, xi_std, y_std, eps, config.prior_mu, config.prior_sigma),
        jac=True,
        method="L-BFGS-B",
        bounds=_param_bounds(config.freeze_warp_identity),
        options={"maxiter": config.outer_iters},
    )
    return SurrogateModel(res.x, data, stats, eps, config)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

_CHECKPOINT_VERSION = 1


def save_model(model: SurrogateModel, path) -> None:
    blob = {
        "version": _CHECKPOINT_VERSION,
        "params": model.params.tolist(),
        "eps": model.eps.tolist(),
        "degenerate": model.degenerate,
        "stats": {
            "xi_mean": model.stats.xi_mean.tolist(),
            "xi_std": model.stats.xi_std.tolist(),
            "y_mean": model.stats.y_mean,
            "y_std": model.stats.y_std,
        },
        "prior_mu": model.config.prior_mu.tolist(),
        "prior_sigma": model.config.prior_sigma.tolist(),
        "outer_iters": model.config.outer_iters,
        "data": {
            "x": [v.tolist() for v in model.data.x],
            "xi": [v.tolist() for v in model.data.xi],
            "y": model.data.y,
            "circuit_ids": model.data.circuit_ids,
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh)


def load_model(path) -> SurrogateModel:
    with open(path, encoding="utf-8") as fh:
        blob = json.load(fh)
    if blob.get("version") != _CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')}")
    data = Dataset()
    for x, xi, y, cid in zip(
        blob["data"]["x"],
        blob["data"]["xi"],
        blob["data"]["y"],
        blob["data"]["circuit_ids"],
    ):
        data.append(x, xi, y, cid)
    stats = Stats(
        np.array(blob["stats"]["xi_mean"]),
        np.array(blob["stats"]["xi_std"]),
        blob["stats"]["y_mean"],
        blob["stats"]["y_std"],
    )
    config = TrainConfig(
        outer_iters=blob["outer_iters"],
        prior_mu=np.array(blob["prior_mu"]),
        prior_sigma=np.array(blob["prior_sigma"]),
    )
    return SurrogateModel(
        np.array(blob["params"]),
        data,
        stats,
        np.array(blob["eps"]),
        config,
        degenerate=blob["degenerate"],
    )
