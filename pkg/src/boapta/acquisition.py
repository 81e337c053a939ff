"""Acquisition functions and the inner optimizer over the unconstrained space.

Candidates live in z-space: x_d = 10**(14*sigmoid(z_d) - 7), which maps all
of R^4 smoothly onto the solver-parameter box (1e-7, 1e7)^4 and makes the
search operate on parameter magnitudes. The objective is minimized, so all
three acquisition functions are evaluated on the negated standardized
posterior and keep their usual maximization form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_ndtr, ndtr
from scipy.stats import qmc

from .cepta import SolverParams
from .surrogate import SurrogateModel, x_to_unit

__all__ = [
    "AcquisitionConfig",
    "z_to_x",
    "x_to_z",
    "expected_improvement",
    "ucb_score",
    "mes_score",
    "sample_max_values",
    "optimize_acquisition",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_Z_BOUND = 16.0


@dataclass
class AcquisitionConfig:
    """Knobs of the inner search; kind is one of 'ei', 'ucb', 'mes'."""

    kind: str = "mes"
    ucb_beta: float = 0.1
    mes_num_max_samples: int = 10
    mes_grid: int = 512
    restarts: int = 8
    inner_iters: int = 5

    def __post_init__(self):
        if self.kind not in ("ei", "ucb", "mes"):
            raise ValueError(f"unknown acquisition kind {self.kind!r}")
        if self.ucb_beta <= 0:
            raise ValueError("ucb_beta must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


def z_to_x(z) -> np.ndarray:
    """Map unconstrained z to raw solver parameters, 10**(14*sigmoid(z)-7)."""
    return 10.0 ** (14.0 * expit(np.asarray(z, dtype=float)) - 7.0)


def x_to_z(x) -> np.ndarray:
    """Inverse map for interior points; boundary values are nudged inside."""
    u = np.clip(x_to_unit(x), 1e-12, 1.0 - 1e-12)
    return np.log(u / (1.0 - u))


def _phi(t: float) -> float:
    return math.exp(-0.5 * t * t) / _SQRT_2PI


def expected_improvement(mu: float, var: float, y_best: float) -> float:
    """Closed-form EI of a Gaussian posterior over the incumbent.

    ``mu`` and ``y_best`` are on the negated (maximize) scale, so the
    improvement mean is mu - y_best.
    """
    if var < 0:
        raise ValueError("variance must be non-negative")
    delta = mu - y_best
    s = math.sqrt(var)
    if s == 0.0:
        return max(delta, 0.0)
    t = delta / s
    return delta * ndtr(t) + s * _phi(t)


def ucb_score(mu: float, var: float, beta: float) -> float:
    """Upper confidence bound mu + sqrt(beta) * sqrt(var)."""
    if var < 0:
        raise ValueError("variance must be non-negative")
    return mu + math.sqrt(beta) * math.sqrt(var)


def mes_score(mu: float, var: float, max_samples) -> float:
    """Average per-sample information gain about the optimum value.

    Each sample y* contributes g*phi(g)/(2*Psi(g)) - ln Psi(g) with
    g = (y* - mu)/sqrt(var); evaluated through log-CDFs for stability.
    """
    samples = list(max_samples)
    if not samples:
        raise ValueError("max_samples must be non-empty")
    if var <= 0:
        raise ValueError("variance must be positive")
    s = math.sqrt(var)
    total = 0.0
    for y_star in samples:
        g = (y_star - mu) / s
        log_cdf = log_ndtr(g)
        log_pdf = -0.5 * g * g - math.log(_SQRT_2PI)
        total += 0.5 * g * math.exp(log_pdf - log_cdf) - log_cdf
    return total / len(samples)


def sample_max_values(
    predict_unit,
    n_samples: int,
    rng: np.random.Generator,
    grid_size: int = 512,
) -> np.ndarray:
    """Gumbel approximation of the posterior over the optimum value.

    ``predict_unit(x01) -> (mu, var)`` is evaluated (on the negated scale)
    over a low-discrepancy grid — batched when the callable accepts an
    (n, 4) array; the product CDF prod_g Psi((y-mu_g)/s_g) is
    quantile-matched to a Gumbel whose samples approximate y*.
    """
    sob = qmc.Sobol(d=4, scramble=True, seed=int(rng.integers(2**31)))
    grid = sob.random(grid_size)
    try:
        mu_b, var_b = predict_unit(grid)
        mus = -np.asarray(mu_b, float)
        sigmas = np.sqrt(np.maximum(np.asarray(var_b, float), 1e-18))
        if mus.shape != (grid_size,):
            raise TypeError
    except (TypeError, ValueError):
        mus = np.empty(grid_size)
        sigmas = np.empty(grid_size)
        for i, u in enumerate(grid):
            mu, var = predict_unit(u)
            mus[i] = -mu  # negated scale: larger is better
            sigmas[i] = math.sqrt(max(var, 1e-18))

    lo = float(np.max(mus))
    hi = float(np.max(mus + 6.0 * sigmas))
    if hi <= lo:
        hi = lo + 1.0

    def log_prod_cdf(y: float) -> float:
        return float(np.sum(log_ndtr((y - mus) / sigmas)))

    def quantile(q: float) -> float:
        lo_i, hi_i = lo, hi
        target = math.log(q)
        for _ in range(60):
            mid = 0.5 * (lo_i + hi_i)
            if log_prod_cdf(mid) < target:
                lo_i = mid
            else:
                hi_i = mid
        return 0.5 * (lo_i + hi_i)

    y25, y50, y75 = quantile(0.25), quantile(0.5), quantile(0.75)
    # Gumbel(a, b): CDF exp(-exp(-(y-a)/b))
    b = (y75 - y25) / (math.log(math.log(4.0)) - math.log(math.log(4.0 / 3.0)))
    b = max(abs(b), 1e-12)
    a = y50 + b * math.log(math.log(2.0))
    u = rng.uniform(size=n_samples)
    return a - b * np.log(-np.log(u))


def _lhs_unit(n: int, rng: np.random.Generator) -> np.ndarray:
    sampler = qmc.LatinHypercube(d=4, seed=int(rng.integers(2**31)))
    return sampler.random(n)


def optimize_acquisition(
    model: SurrogateModel,
    xi_feat,
    config: AcquisitionConfig,
    rng: np.random.Generator,
    y_best: float | None = None,
    tau: float = 1.0,
    warm_x=None,
) -> SolverParams:
    """Multi-start quasi-Newton ascent of the acquisition in z-space.

    The netlist-feature kernel factor is precomputed once. Restart points
    are Latin-hypercube draws plus the incumbent; ties at the final argmax
    resolve to the lowest restart index. Deterministic for a fixed rng.
    """
    xi = np.asarray(xi_feat, dtype=float)
    if model.degenerate or model._cache is None:
        return SolverParams.from_vector(z_to_x(np.zeros(4)), tau)
    cond = model.conditioned(xi)

    if y_best is None:
        y_best = min(model.data.y)
    y_best_neg = -model.standardize_y(float(y_best))

    if config.kind == "mes":
        max_values = sample_max_values(
            cond.predict_std_batch,
            config.mes_num_max_samples,
            rng,
            config.mes_grid,
        )

    def acq(z: np.ndarray) -> float:
        mu, var = cond.predict_std_from_unit(expit(z))
        mu_neg = -mu
        if config.kind == "ei":
            return expected_improvement(mu_neg, var, y_best_neg)
        if config.kind == "ucb":
            return ucb_score(mu_neg, var, config.ucb_beta)
        return mes_score(mu_neg, max(var, 1e-18), max_values)

    starts = []
    if warm_x is not None:
        starts.append(x_to_z(np.asarray(warm_x, dtype=float)))
    n_draw = max(config.restarts - len(starts), 0)
    if n_draw:
        u = np.clip(_lhs_unit(n_draw, rng), 1e-9, 1 - 1e-9)
        starts.extend(np.log(u / (1.0 - u)))
    starts = starts[: config.restarts]

    best_z, best_val = None, -math.inf
    bounds = [(-_Z_BOUND, _Z_BOUND)] * 4
    for z0 in starts:
        res = minimize(
            lambda z: -acq(z),
            np.clip(z0, -_Z_BOUND, _Z_BOUND),
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": config.inner_iters},
        )
        candidates = [(res.x, -res.fun), (z0, acq(z0))]
        for z_c, v_c in candidates:
            if v_c > best_val + 1e-15:
                best_z, best_val = np.array(z_c), v_c
    return SolverParams.from_vector(z_to_x(best_z), tau)
