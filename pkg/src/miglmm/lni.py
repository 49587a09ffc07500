"""Logistic-normal integral engine.

Evaluates phi(mu, sigma2) = E[1/(1 + e^W)] for W ~ Normal(mu, sigma2) by
four routes:

* ``phi_gh``         -- Gauss-Hermite quadrature of configurable order;
* ``phi_grid_exact`` -- the exact recursion
                        phi(mu + s2, s2) = exp(-mu - s2/2) * (1 - phi(mu, s2))
                        anchored at phi(0, s2) = 1/2, valid on the grid
                        mu = t * s2;
* ``phi_ms``         -- a k=8 normal-CDF mixture approximation of the inverse
                        logit, integrable in closed form against any normal;
* ``phi_hybrid``     -- the production path: reduce mu modulo sigma2 onto
                        [0, sigma2), apply the mixture there (where it is most
                        accurate), then climb back to mu with the exact
                        recursion.

``logistic_normal_mean`` exposes E[h(kappa + V)] = 1 - phi(kappa, tau2) for
V ~ Normal(0, tau2), which is the quantity the adjustment solvers consume.

All functions are pure; rules and mixture constants are immutable and safe
to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import expit, ndtr

from . import _ms_constants
from .links import LinkFunction, inverse_link

_SQRT_PI = math.sqrt(math.pi)
# Above this many recursion steps, switch to the algebraically identical
# alternating-series form (vectorized, remainder-bounded).
_SERIES_THRESHOLD = 64
_T_CAP = 10**6


@dataclass(frozen=True)
class GaussHermiteRule:
    """Physicists' Gauss-Hermite rule: integrates f against exp(-x^2)."""

    order: int
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.nodes.flags.writeable = False
        self.weights.flags.writeable = False


@dataclass(frozen=True)
class NormalMixtureApprox:
    """h(z) ~= sum_i p[i] * Phi(z * s[i]), with sum(p) = 1 and s > 0."""

    k: int
    p: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        s = np.asarray(self.s, dtype=float)
        if p.shape != (self.k,) or s.shape != (self.k,):
            raise ValueError(f"p and s must have length k={self.k}")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights must sum to 1, got {p.sum()}")
        if np.any(s <= 0):
            raise ValueError("mixture scales must be positive")
        p.flags.writeable = False
        s.flags.writeable = False
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "s", s)


DEFAULT_MIXTURE = NormalMixtureApprox(
    k=len(_ms_constants.WEIGHTS),
    p=np.array(_ms_constants.WEIGHTS),
    s=np.array(_ms_constants.SCALES),
)

_rule_cache: dict[int, GaussHermiteRule] = {}


def _orthonormal_hermite_pair(x: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Scaled values of the orthonormal Hermite polynomials p_{order-1), p_order.

    Returns (p_prev, p_last, log_scale) where the true values are
    p * exp(log_scale), elementwise.  The shared scale keeps the recurrence
    in range up to order 1000, where raw values overflow double precision.
    """
    pk_prev = np.zeros_like(x)
    pk = np.full_like(x, math.pi ** -0.25)
    log_scale = np.zeros_like(x)
    for k in range(order):
        pk_next = x * math.sqrt(2.0 / (k + 1)) * pk - math.sqrt(k / (k + 1)) * pk_prev
        pk_prev, pk = pk, pk_next
        big = np.abs(pk) > 1e120
        if np.any(big):
            pk[big] *= 1e-120
            pk_prev[big] *= 1e-120
            log_scale[big] += 120 * math.log(10.0)
    return pk_prev, pk, log_scale


def gauss_hermite_rule(order: int) -> GaussHermiteRule:
    """Golub-Welsch nodes/weights with one Newton polish per node.

    The Jacobi matrix for the weight exp(-x^2) has zero diagonal and
    off-diagonals sqrt(k/2); its eigenvalues are the nodes.  Weights follow
    from w_i = 1 / (n * p_{n-1}(x_i)^2) with p orthonormal, evaluated in log
    space since p_{n-1} overflows at high order.
    """
    if not isinstance(order, (int, np.integer)) or not 1 <= order <= 1000:
        raise ValueError(f"rule order must be an integer in [1, 1000], got {order}")
    order = int(order)
    cached = _rule_cache.get(order)
    if cached is not None:
        return cached

    if order == 1:
        rule = GaussHermiteRule(1, np.array([0.0]), np.array([_SQRT_PI]))
        _rule_cache[order] = rule
        return rule

    off_diag = np.sqrt(np.arange(1, order) / 2.0)
    nodes = eigh_tridiagonal(np.zeros(order), off_diag, eigvals_only=True)

    # Newton polish: p_n(x) = 0, with p_n'(x) = sqrt(2n) p_{n-1}(x).
    p_prev, p_last, _ = _orthonormal_hermite_pair(nodes, order)
    delta = p_last / (math.sqrt(2.0 * order) * p_prev)
    nodes = nodes - delta
    # Enforce exact symmetry (kills asymmetric rounding in the eigensolver).
    nodes = 0.5 * (nodes - nodes[::-1])

    p_prev, _, log_scale = _orthonormal_hermite_pair(nodes, order)
    log_w = -math.log(order) - 2.0 * (np.log(np.abs(p_prev)) + log_scale)
    weights = np.exp(log_w)
    weights = 0.5 * (weights + weights[::-1])

    rule = GaussHermiteRule(order, nodes, weights)
    _rule_cache[order] = rule
    return rule


def phi_gh(mu: float, sigma2: float, rule: GaussHermiteRule) -> float:
    """Quadrature estimate of phi(mu, sigma2) via w = mu + sqrt(2 sigma2) x."""
    if sigma2 <= 0.0:
        raise ValueError(f"sigma2 must be > 0, got {sigma2}")
    w = mu + math.sqrt(2.0 * sigma2) * rule.nodes
    return float(rule.weights @ expit(-w)) / _SQRT_PI


def phi_grid_exact(t: int, sigma2: float) -> float:
    """phi(t * sigma2, sigma2) by t applications of the exact recursion."""
    if t < 0:
        raise ValueError(f"t must be a nonnegative integer, got {t}")
    phi = 0.5
    half = 0.5 * sigma2
    for j in range(int(t)):
        phi = math.exp(-j * sigma2 - half) * (1.0 - phi)
    return phi


def _phi_ms_scalar(mu: float, sigma2: float, approx: NormalMixtureApprox) -> float:
    s = approx.s
    c = s / np.sqrt(1.0 + sigma2 * s * s)
    if mu >= 0.0:
        return float(approx.p @ ndtr(-mu * c))
    return 1.0 - float(approx.p @ ndtr(mu * c))


def phi_ms(mu: float, sigma2: float, approx: NormalMixtureApprox = DEFAULT_MIXTURE) -> float:
    """Closed-form mixture value of phi(mu, sigma2).

    phi(mu, s2) = E[h(-W)] for W ~ N(mu, s2), so the mixture integral is
    evaluated at xi = -mu; the branch keeps all Phi arguments nonpositive,
    avoiding cancellation near 1.
    """
    if sigma2 <= 0.0:
        raise ValueError(f"sigma2 must be > 0, got {sigma2}")
    return _phi_ms_scalar(mu, sigma2, approx)


def _recursion_series(r: float, sigma2: float, t: int, phi0: float) -> float:
    """Unrolled recursion: phi_t = sum_m (-1)^(m-1) exp(-m mu + m^2 s2/2) + (-1)^t P_t phi0.

    Terms decrease monotonically for m <= t; truncation after the terms drop
    below 1e-22 is covered by the alternating-series bound.
    """
    mu = r + t * sigma2
    m = np.arange(1, t + 1, dtype=float)
    expo = -m * mu + 0.5 * sigma2 * m * m
    keep = expo >= -60.0
    if not np.all(keep):
        last = int(np.argmin(keep))  # terms decrease; everything after is smaller
        m = m[:last]
        expo = expo[:last]
        tail = 0.0
    else:
        p_t = math.exp(-t * mu + 0.5 * sigma2 * t * t)
        tail = (p_t * phi0) if t % 2 == 0 else (-p_t * phi0)
    terms = np.exp(expo)
    terms[1::2] *= -1.0
    return float(terms.sum() + tail)


def _apply_recursion(phi: float, r: float, sigma2: float, t: int) -> float:
    if t <= _SERIES_THRESHOLD:
        half = 0.5 * sigma2
        for j in range(t):
            phi = math.exp(-(r + j * sigma2) - half) * (1.0 - phi)
        return phi
    return _recursion_series(r, sigma2, t, phi)


def phi_hybrid(mu: float, sigma2: float, approx: NormalMixtureApprox = DEFAULT_MIXTURE) -> float:
    """Hybrid mixture/recursion evaluation of phi(mu, sigma2)."""
    if sigma2 <= 0.0:
        raise ValueError(f"sigma2 must be > 0, got {sigma2}")
    if mu < 0.0:
        return 1.0 - phi_hybrid(-mu, sigma2, approx)
    if mu > 40.0 + 4.0 * sigma2:
        # h saturates: phi ~ exp(-mu + sigma2/2), relative error < 1e-17 here.
        return math.exp(-mu + 0.5 * sigma2)
    t = int(mu // sigma2)
    r = mu - t * sigma2
    if r >= sigma2:  # rounding guard when mu/sigma2 is an exact integer
        t += 1
        r = 0.0
    if t > _T_CAP:
        t = _T_CAP
        r = mu - t * sigma2
    phi0 = _phi_ms_scalar(r, sigma2, approx)
    return _apply_recursion(phi0, r, sigma2, t)


def logistic_normal_mean(kappa: float, tau2: float) -> float:
    """E[h(kappa + V)] for V ~ Normal(0, tau2); h(kappa) exactly when tau2 = 0."""
    if tau2 < 0.0:
        raise ValueError(f"tau2 must be >= 0, got {tau2}")
    if tau2 == 0.0:
        return inverse_link(LinkFunction.LOGIT, kappa)
    return 1.0 - phi_hybrid(kappa, tau2)


# ---------------------------------------------------------------------------
# Vectorized variants used by the benchmark path (identical math, batched
# over mu for a fixed sigma2).
# ---------------------------------------------------------------------------


def phi_gh_many(mu: np.ndarray, sigma2: float, rule: GaussHermiteRule) -> np.ndarray:
    if sigma2 <= 0.0:
        raise ValueError(f"sigma2 must be > 0, got {sigma2}")
    mu = np.asarray(mu, dtype=float)
    w = mu[:, None] + math.sqrt(2.0 * sigma2) * rule.nodes[None, :]
    return expit(-w) @ rule.weights / _SQRT_PI


def phi_ms_many(mu: np.ndarray, sigma2: float,
                approx: NormalMixtureApprox = DEFAULT_MIXTURE) -> np.ndarray:
    if sigma2 <= 0.0:
        raise ValueError(f"sigma2 must be > 0, got {sigma2}")
    mu = np.asarray(mu, dtype=float)
    s = approx.s
    c = s / np.sqrt(1.0 + sigma2 * s * s)
    out = ndtr(-np.abs(mu)[:, None] * c[None, :]) @ approx.p
    return np.where(mu >= 0, out, 1.0 - out)


def phi_hybrid_many(mu: np.ndarray, sigma2: float,
                    approx: NormalMixtureApprox = DEFAULT_MIXTURE) -> np.ndarray:
    if sigma2 <= 0.0:
        raise ValueError(f"sigma2 must be > 0, got {sigma2}")
    mu = np.asarray(mu, dtype=float)
    amu = np.abs(mu)
    far = amu > 40.0 + 4.0 * sigma2
    t = np.floor_divide(amu, sigma2).astype(np.int64)
    r = amu - t * sigma2
    guard = r >= sigma2
    t[guard] += 1
    r[guard] = 0.0
    t[far] = 0  # placeholder; replaced by the asymptote below

    phi = phi_ms_many(r, sigma2, approx)
    t_max = int(t.max(initial=0))
    if t_max > _SERIES_THRESHOLD:
        # rare in batch use; fall back elementwise where deep
        deep = t > _SERIES_THRESHOLD
        phi[deep] = [phi_hybrid(float(m), sigma2, approx) for m in amu[deep]]
        t = np.where(deep, 0, t)
        t_max = int(t.max(initial=0))
    half = 0.5 * sigma2
    for j in range(t_max):
        active = t > j
        phi[active] = np.exp(-(r[active] + j * sigma2) - half) * (1.0 - phi[active])
    phi[far] = np.exp(-amu[far] + half)
    return np.where(mu >= 0, phi, 1.0 - phi)
