"""Independent gold-standard evaluators for tests and acceptance runs.

Everything here deliberately avoids the production integration and
adjustment code: quadrature rules come from numpy's hermgauss, normal CDFs
from scipy, and the marginally-interpretable adjustment (where a check
needs one) is re-solved from scratch with Brent's method over quadrature.
The only package dependency is the link-function module.

Not a user-facing inference path; reachable from the CLI only through
``miglmm integrate-bench --methods gold``.
"""

from __future__ import annotations

import math
from typing import TYPE_CHECKING

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, gammaln, ndtr

from .links import LinkFunction, inverse_link

if TYPE_CHECKING:  # only for annotations; runtime stays independent
    from .laws import GammaShiftLaw, NormalLaw, NormalMixtureLaw
    from .model import Dataset, ModelSpec

_SQRT_PI = math.sqrt(math.pi)
_gold_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _hermgauss(order: int) -> tuple[np.ndarray, np.ndarray]:
    rule = _gold_cache.get(order)
    if rule is None:
        rule = np.polynomial.hermite.hermgauss(order)
        _gold_cache[order] = rule
    return rule


def phi_gold(mu: float, sigma2: float) -> float:
    """1000-point Gauss-Hermite value of E[1/(1+e^W)], W ~ N(mu, sigma2)."""
    if sigma2 <= 0.0:
        raise ValueError(f"sigma2 must be > 0, got {sigma2}")
    x, w = _hermgauss(1000)
    return float(w @ expit(-(mu + math.sqrt(2.0 * sigma2) * x))) / _SQRT_PI


def phi_gold_many(mu: np.ndarray, sigma2: float) -> np.ndarray:
    if sigma2 <= 0.0:
        raise ValueError(f"sigma2 must be > 0, got {sigma2}")
    x, w = _hermgauss(1000)
    eta = np.asarray(mu, dtype=float)[:, None] + math.sqrt(2.0 * sigma2) * x[None, :]
    return expit(-eta) @ w / _SQRT_PI


def mc_integral(f, law, size: int, seed: int, design=None) -> tuple[float, float]:
    """Seeded plain Monte Carlo of E[f(d'U)] with a sample-variance SE.

    ``law`` is any object with a ``sample(rng, n)`` method; ``design``
    reduces multivariate draws to d'U (defaults to summing components).
    """
    if size < 10**4:
        raise ValueError(f"Monte Carlo size must be >= 1e4, got {size}")
    rng = np.random.default_rng(seed)
    total = 0.0
    total_sq = 0.0
    done = 0
    chunk = 10**7
    while done < size:
        n = min(chunk, size - done)
        u = law.sample(rng, n)
        if u.ndim == 2:
            du = u @ (np.ones(u.shape[1]) if design is None else np.asarray(design, dtype=float))
        else:
            du = u if design is None else float(np.atleast_1d(design)[0]) * u
        vals = np.asarray(f(du), dtype=float)
        if not np.all(np.isfinite(vals)):
            bad = int(np.flatnonzero(~np.isfinite(vals))[0])
            raise FloatingPointError(f"non-finite integrand at draw {done + bad}")
        total += float(vals.sum())
        total_sq += float((vals * vals).sum())
        done += n
    mean = total / size
    var = max(total_sq / size - mean * mean, 0.0)
    se = math.sqrt(var / size)
    return mean, se


# ---------------------------------------------------------------------------
# Small-instance exact marginal likelihood (independent intercepts)
# ---------------------------------------------------------------------------


def _log_pmf(family: str, y: float, trials: float, mu: float) -> float:
    tiny = 1e-300
    if family == "bernoulli":
        return math.log(max(mu, tiny)) if y == 1 else math.log(max(1.0 - mu, tiny))
    if family == "binomial":
        return (gammaln(trials + 1) - gammaln(y + 1) - gammaln(trials - y + 1)
                + y * math.log(max(mu, tiny)) + (trials - y) * math.log(max(1.0 - mu, tiny)))
    if family == "poisson":
        return y * math.log(max(mu, tiny)) - mu - gammaln(y + 1)
    raise ValueError(f"unknown family {family!r}")


def _solve_adjustment(link: LinkFunction, kappa: float, sigma2: float) -> float:
    """Brute-force solve of E[h(kappa + u + a)] = h(kappa), u ~ N(0, sigma2)."""
    if sigma2 == 0.0:
        return 0.0
    x, w = _hermgauss(401)
    u = math.sqrt(2.0 * sigma2) * x
    wn = w / w.sum()
    target = inverse_link(link, kappa)
    hfun = np.vectorize(lambda e: inverse_link(link, e))

    def resid(a: float) -> float:
        return float(wn @ hfun(kappa + a + u)) - target

    width = 0.5 * sigma2 + 5.0 * math.sqrt(sigma2) + 5.0
    lo, hi = -width, width
    for _ in range(12):
        if resid(lo) <= 0.0 <= resid(hi):
            return brentq(resid, lo, hi, xtol=1e-14, rtol=8.9e-16)
        lo *= 2.0
        hi *= 2.0
    raise RuntimeError(f"adjustment bracket failed for {link.value} at kappa={kappa}")


def exact_marginal_loglik_small(spec: "ModelSpec", data: "Dataset", beta, alpha) -> float:
    """log prod_i integral f(y_i|u) N(u; 0, sigma_i^2) du by adaptive quadrature.

    Limited to <= 20 observations with one level of independent
    per-observation intercepts; used to test the marginal-invariance and
    identifiability-leak claims without touching the production code.
    """
    n = data.n
    if n > 20:
        raise ValueError(f"exact marginal likelihood limited to 20 observations, got {n}")
    if len(spec.re_levels) > 1:
        raise ValueError("exact marginal likelihood supports at most one random-effect level")
    family = spec.family.value
    link = spec.link
    beta = np.asarray(beta, dtype=float)
    kappas = np.asarray(data.x_matrix() @ beta, dtype=float)
    trials = data.trials if data.trials is not None else np.ones(n)

    if spec.re_levels:
        level = spec.re_levels[0]
        groups = level.groups
        if len(np.unique(groups)) != n:
            raise ValueError("exact marginal likelihood requires independent intercepts")
        sig2 = np.exp(np.asarray(alpha, dtype=float))[level.stratum_of_group(groups)]
    else:
        sig2 = np.zeros(n)

    x, w = _hermgauss(201)
    logw = np.log(w)
    total = 0.0
    for i in range(n):
        kap = float(kappas[i])
        s2 = float(sig2[i])
        shift = _solve_adjustment(link, kap, s2) if spec.marginally_interpretable else 0.0
        if s2 == 0.0:
            mu = inverse_link(link, kap + shift)
            total += _log_pmf(family, float(data.y[i]), float(trials[i]), mu)
            continue

        def log_integrand(u: float) -> float:
            mu = inverse_link(link, kap + shift + u)
            return (_log_pmf(family, float(data.y[i]), float(trials[i]), mu)
                    - 0.5 * u * u / s2 - 0.5 * math.log(2.0 * math.pi * s2))

        # adaptive recentring: mode and curvature of the log integrand
        grid = np.linspace(-6.0 * math.sqrt(s2), 6.0 * math.sqrt(s2), 101)
        vals = np.array([log_integrand(g) for g in grid])
        u0 = float(grid[np.argmax(vals)])
        h_step = max(1e-4, 1e-3 * math.sqrt(s2))
        curv = -(log_integrand(u0 + h_step) - 2.0 * log_integrand(u0) + log_integrand(u0 - h_step)) / h_step**2
        scale = 1.0 / math.sqrt(curv) if curv > 0 else math.sqrt(s2)
        u = u0 + math.sqrt(2.0) * scale * x
        lv = np.array([log_integrand(ui) for ui in u]) + x * x + logw
        m = lv.max()
        total += m + math.log(np.exp(lv - m).sum()) + 0.5 * math.log(2.0) + math.log(scale)
    return float(total)
