"""Adjustments that make a GLMM's fixed effects population-averaged.

For a link g with inverse h and a mean-zero random effect d'U, the
adjustment d'a is the shift solving

    E[ h(kappa + d'U + d'a) ] = h(kappa),        kappa = x'beta.

Closed forms exist for the identity (zero), log (-log MGF), probit
(linear in kappa), and square-root (quadratic) links; the logit and
complementary log-log links are solved by bisection on a monotone
residual, the logit case against the hybrid logistic-normal evaluator.
The reciprocal link is different in kind: no shift works, so the
random-effect law itself is reshaped into a shifted gamma.

All solvers use plain bisection (robust on the guaranteed-monotone
residual); the bracket-width/residual tolerance of 1e-12 sits below the
1e-9 integral accuracy floor, so solver error never dominates.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np
from scipy.special import roots_genlaguerre

from . import lni
from .laws import GammaShiftLaw, NormalLaw, NormalMixtureLaw
from .links import LinkFunction, inverse_link
from .lni import DEFAULT_MIXTURE, GaussHermiteRule, gauss_hermite_rule

Law = NormalLaw | NormalMixtureLaw | GammaShiftLaw

_BISECT_TOL = 1e-12
_LOGIT_LIMIT_KAPPA = 45.0  # beyond this (plus tau2), a = tau2/2 * sign to < 1e-15
_T_SEARCH_CAP = 10**6


class ConvergenceError(RuntimeError):
    """A root search failed to bracket or meet its residual tolerance."""


class ModelUndefinedError(ValueError):
    """The requested link/parameter combination leaves the model undefined."""


@dataclass(frozen=True)
class RandomEffectSpec:
    """Random-effect structure: grouping, design vector d, and law.

    ``grouping`` maps observation index to group index (None when the spec
    describes a single generic effect), ``design`` is the q-vector d, and
    ``law`` the mean-zero distribution of U.
    """

    design: np.ndarray
    law: Law
    grouping: np.ndarray | None = None

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.design, dtype=float))
        if d.ndim != 1:
            raise ValueError("design must be a vector")
        if isinstance(self.law, NormalLaw) and d.size != self.law.dim:
            raise ValueError(
                f"design has {d.size} entries but law has dimension {self.law.dim}"
            )
        if isinstance(self.law, NormalMixtureLaw) and d.size != 1:
            raise ValueError("mixture laws are scalar; design must have one entry")
        d.flags.writeable = False
        object.__setattr__(self, "design", d)


@dataclass(frozen=True)
class Adjustment:
    """A computed shift d'a for one (link, kappa, effective variance)."""

    value: float
    link: LinkFunction
    kappa: float
    tau2: float


def effective_variance(d: np.ndarray, law: NormalLaw) -> float:
    """d' Sigma d: the scalar variance after reducing d'U to one dimension."""
    d = np.atleast_1d(np.asarray(d, dtype=float))
    if d.size != law.dim:
        raise ValueError(f"design has {d.size} entries but covariance is {law.dim}x{law.dim}")
    return float(d @ law.cov @ d)


def adjust_identity(law: Law | None = None, kappa: float = 0.0) -> Adjustment:
    """Identity link: zero adjustment whenever the law has mean zero."""
    if isinstance(law, GammaShiftLaw):
        mean = law.mean() if law.scale is not None else None
        if mean is None or abs(mean) > 1e-12:
            raise ValueError("identity link requires a mean-zero random-effect law")
    # NormalLaw and NormalMixtureLaw are mean-zero by construction.
    return Adjustment(0.0, LinkFunction.IDENTITY, kappa, _law_variance(law))


def _law_variance(law: Law | None) -> float:
    if law is None:
        return 0.0
    if isinstance(law, NormalLaw):
        return float(law.cov.sum()) if law.dim > 1 else float(law.cov[0, 0])
    if isinstance(law, NormalMixtureLaw):
        return law.variance()
    return float("nan")


def adjust_log(d: np.ndarray | float, law: NormalLaw | NormalMixtureLaw,
               kappa: float = 0.0) -> Adjustment:
    """Log link: d'a = -log M_U(d), independent of kappa."""
    if isinstance(law, NormalLaw):
        tau2 = effective_variance(np.atleast_1d(d), law)
        return Adjustment(-0.5 * tau2, LinkFunction.LOG, kappa, tau2)
    if isinstance(law, NormalMixtureLaw):
        dd = float(np.atleast_1d(d)[0])
        value = -law.log_mgf(dd)
        return Adjustment(value, LinkFunction.LOG, kappa, dd * dd * law.variance())
    raise ValueError(f"log link requires a normal or normal-mixture law, got {type(law).__name__}")


def adjust_probit(kappa: float, tau2: float) -> Adjustment:
    """Probit link with normal effects: d'a = (sqrt(1 + tau2) - 1) * kappa."""
    if tau2 < 0.0:
        raise ValueError(f"tau2 must be >= 0, got {tau2}")
    value = (math.sqrt(1.0 + tau2) - 1.0) * kappa
    return Adjustment(value, LinkFunction.PROBIT, kappa, tau2)


def adjust_logit(kappa: float, tau2: float) -> Adjustment:
    """Logit link with normal effects, solved on the exact recursion grid.

    For kappa > 0 the root m = kappa + a of 1 - phi(m, tau2) = h(kappa) is
    bracketed by walking the exact grid values phi(t*tau2, tau2), then
    bisected with the hybrid evaluator until the bracket is narrower than
    1e-12 * max(1, tau2).  Negative kappa uses the sign symmetry; kappa = 0
    or tau2 = 0 gives a = 0.
    """
    if tau2 < 0.0:
        raise ValueError(f"tau2 must be >= 0, got {tau2}")
    if kappa == 0.0 or tau2 == 0.0:
        return Adjustment(0.0, LinkFunction.LOGIT, kappa, tau2)
    if kappa < 0.0:
        return Adjustment(-adjust_logit(-kappa, tau2).value, LinkFunction.LOGIT, kappa, tau2)
    if kappa >= _LOGIT_LIMIT_KAPPA + tau2:
        return Adjustment(0.5 * tau2, LinkFunction.LOGIT, kappa, tau2)

    # Work with the complement: 1 - phi(m) = h(kappa) <=> phi(m) = h(-kappa).
    # Both sides then carry full relative precision for large kappa, where
    # 1 - h(kappa) is many orders below 1.
    target = inverse_link(LinkFunction.LOGIT, -kappa)
    # Walk phi(t*tau2, tau2) by the recursion until it drops below the target.
    t_star = 0
    phi = 0.5
    half = 0.5 * tau2
    while True:
        phi_next = math.exp(-t_star * tau2 - half) * (1.0 - phi)
        if phi_next < target:
            break
        phi = phi_next
        t_star += 1
        if t_star > _T_SEARCH_CAP:
            return Adjustment(0.5 * tau2, LinkFunction.LOGIT, kappa, tau2)

    lo = t_star * tau2
    hi = (t_star + 1) * tau2
    tol = _BISECT_TOL * max(1.0, tau2)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if lni.phi_hybrid(mid, tau2) > target:
            lo = mid
        else:
            hi = mid
    root = 0.5 * (lo + hi)
    return Adjustment(root - kappa, LinkFunction.LOGIT, kappa, tau2)


def adjust_logit_mixture(kappa: float, law: NormalMixtureLaw) -> Adjustment:
    """Logit link with a scalar mean-zero normal-mixture law, by bisection.

    Solves sum_m w_m phi(kappa + a + mu_m, s2_m) = h(-kappa), the complement
    form of the defining identity (equivalent, and free of cancellation
    near h = 1); the residual is decreasing in a.
    """
    target = inverse_link(LinkFunction.LOGIT, -kappa)
    w, mu, v = law.weights, law.means, law.variances

    def resid_at(a: float) -> float:
        total = 0.0
        for wi, mi, vi in zip(w, mu, v):
            eta = kappa + a + mi
            total += wi * (lni.phi_hybrid(eta, vi) if vi > 0.0
                           else inverse_link(LinkFunction.LOGIT, -eta))
        return total - target

    span = 0.5 * float(np.max(mu * mu + v)) + abs(kappa)
    lo, hi = -span, span
    if resid_at(lo) < 0.0 or resid_at(hi) > 0.0:
        raise ConvergenceError(
            f"logit mixture bracket [{lo}, {hi}] does not enclose the root at kappa={kappa}"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = resid_at(mid)
        if abs(f_mid) <= _BISECT_TOL:
            return Adjustment(mid, LinkFunction.LOGIT, kappa, law.variance())
        if f_mid > 0.0:
            lo = mid
        else:
            hi = mid
    return Adjustment(0.5 * (lo + hi), LinkFunction.LOGIT, kappa, law.variance())


def adjust_cloglog(kappa: float, tau2: float,
                   rule: GaussHermiteRule | None = None) -> Adjustment:
    """Complementary log-log link with normal effects, by quadrature + bisection."""
    if tau2 < 0.0:
        raise ValueError(f"tau2 must be >= 0, got {tau2}")
    if tau2 == 0.0:
        return Adjustment(0.0, LinkFunction.CLOGLOG, kappa, tau2)
    if rule is None:
        # exp(-exp(.)) against a wide normal has a sharp transition; order
        # 701 holds the quadrature error near 1e-11 out to tau2 = 16
        rule = gauss_hermite_rule(701)
    if rule.order < 30:
        raise ValueError(f"cloglog adjustment needs a rule of order >= 30, got {rule.order}")

    # expm1 form of E[exp{-exp(kappa + v + a)}] = exp{-exp(kappa)}: keeps
    # relative precision when kappa is very negative and h(kappa) ~ e^kappa.
    target = -math.expm1(-math.exp(kappa))
    v = math.sqrt(2.0 * tau2) * rule.nodes
    wts = rule.weights / rule.weights.sum()

    def mean_h(a: float) -> float:
        # E[h(kappa + V + a)] with h(eta) = 1 - exp(-exp(eta)); increasing in a
        return float(wts @ -np.expm1(-np.exp(kappa + a + v)))

    half_width = 0.5 * tau2 + 5.0 * math.sqrt(tau2) + 5.0
    lo, hi = -half_width, half_width
    slack = 1e-13  # quadrature rounding floor; matters when h saturates at 1
    for expansion in range(11):
        if mean_h(lo) <= target + slack and target <= mean_h(hi) + slack:
            break
        lo *= 2.0
        hi *= 2.0
    else:
        raise ConvergenceError(
            f"cloglog bracket failed to enclose the root after 10 doublings (kappa={kappa}, tau2={tau2})"
        )
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        resid = mean_h(mid) - target
        if abs(resid) <= _BISECT_TOL:
            return Adjustment(mid, LinkFunction.CLOGLOG, kappa, tau2)
        if resid < 0.0:
            lo = mid
        else:
            hi = mid
    return Adjustment(0.5 * (lo + hi), LinkFunction.CLOGLOG, kappa, tau2)


def adjust_sqrt(kappa: float, var_du: float) -> Adjustment:
    """Square-root link: a = -kappa + sqrt(kappa^2 - Var(d'U)).

    Defined only when kappa >= sqrt(Var(d'U)); otherwise the model cannot
    be fit and a ModelUndefinedError is raised.
    """
    if var_du < 0.0:
        raise ValueError(f"variance must be >= 0, got {var_du}")
    if kappa < math.sqrt(var_du):
        raise ModelUndefinedError(
            f"sqrt link undefined: kappa={kappa} < sqrt(Var(d'U))={math.sqrt(var_du)}"
        )
    value = -kappa + math.sqrt(kappa * kappa - var_du)
    return Adjustment(value, LinkFunction.SQRT, kappa, var_du)


def adjust_reciprocal(kappa: float, shape: float) -> GammaShiftLaw:
    """Reciprocal link: reshape kappa + U into Gamma(shape, kappa/(shape-1)).

    No location shift can satisfy the marginal identity here, so the law
    itself changes: the returned gamma has E[1/(kappa + U)] = 1/kappa exactly.
    """
    if kappa <= 0.0:
        raise ValueError(f"reciprocal link requires kappa > 0, got {kappa}")
    if shape <= 1.0:
        raise ValueError(f"gamma shape must be > 1 so that E[1/X] exists, got {shape}")
    return GammaShiftLaw(shape=shape, scale=kappa / (shape - 1.0), shift=kappa)


def adjust_numeric(link: LinkFunction, kappa: float, law: Law,
                   rule: GaussHermiteRule | None = None) -> Adjustment:
    """Generic quadrature + bisection solve of the defining identity.

    Handles the pairings without a closed form or a specialized solver
    (probit or cloglog with a normal-mixture law, and any bounded link as a
    cross-check path).  The residual E[h(kappa + u + a)] - h(kappa) is
    increasing in a, so bisection with geometric bracket expansion applies.
    """
    if rule is None:
        rule = gauss_hermite_rule(701)
    target = inverse_link(link, kappa)
    nodes, wts = rule.nodes, rule.weights / rule.weights.sum()

    if isinstance(law, NormalLaw):
        taus = [math.sqrt(2.0 * effective_variance(np.ones(law.dim), law))]
        comp_w = [1.0]
        comp_mu = [0.0]
        spread = effective_variance(np.ones(law.dim), law)
    elif isinstance(law, NormalMixtureLaw):
        taus = [math.sqrt(2.0 * vi) for vi in law.variances]
        comp_w = list(law.weights)
        comp_mu = list(law.means)
        spread = law.variance() + float(np.max(np.abs(law.means))) ** 2
    else:
        raise ValueError(f"no numeric adjustment path for law {type(law).__name__}")

    hfun = np.vectorize(lambda e: inverse_link(link, e))

    def mean_at(a: float) -> float:
        total = 0.0
        for wi, mi, ti in zip(comp_w, comp_mu, taus):
            if ti == 0.0:
                total += wi * inverse_link(link, kappa + a + mi)
            else:
                total += wi * float(wts @ hfun(kappa + a + mi + ti * nodes))
        return total

    half_width = 0.5 * spread + 5.0 * math.sqrt(spread) + 5.0
    lo, hi = -half_width, half_width
    slack = 1e-13
    for _ in range(11):
        if mean_at(lo) <= target + slack and target <= mean_at(hi) + slack:
            break
        lo *= 2.0
        hi *= 2.0
    else:
        raise ConvergenceError(
            f"bracket failed to enclose the root for {link.value} at kappa={kappa}"
        )
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        resid = mean_at(mid) - target
        if abs(resid) <= _BISECT_TOL:
            return Adjustment(mid, link, kappa, spread)
        if resid < 0.0:
            lo = mid
        else:
            hi = mid
    return Adjustment(0.5 * (lo + hi), link, kappa, spread)


# ---------------------------------------------------------------------------
# Memoized dispatch used by the likelihood code: many observations share
# (link, kappa, tau2) within one evaluation.
# ---------------------------------------------------------------------------

_memo_lock = threading.Lock()
_memo: dict[tuple, float] = {}
_MEMO_MAX = 8192


def linear_shift(link: LinkFunction, kappa: float, tau2: float) -> float:
    """The shift d'a for a scalar mean-zero normal effect of variance tau2.

    Memoized on (link, kappa rounded to 1e-14, tau2); the cache is lock
    protected so concurrent callers never see a partial entry.
    """
    if tau2 == 0.0 or link is LinkFunction.IDENTITY:
        return 0.0
    if link is LinkFunction.LOG:
        return -0.5 * tau2
    if link is LinkFunction.PROBIT:
        return (math.sqrt(1.0 + tau2) - 1.0) * kappa
    if link is LinkFunction.SQRT:
        return adjust_sqrt(kappa, tau2).value

    key = (link.value, round(kappa, 14), tau2)
    with _memo_lock:
        hit = _memo.get(key)
    if hit is not None:
        return hit
    if link is LinkFunction.LOGIT:
        value = adjust_logit(kappa, tau2).value
    elif link is LinkFunction.CLOGLOG:
        value = adjust_cloglog(kappa, tau2).value
    else:
        raise ValueError(f"no adjustment path for link {link.value}")
    with _memo_lock:
        if len(_memo) >= _MEMO_MAX:
            _memo.clear()
        _memo[key] = value
    return value


def clear_adjustment_cache() -> None:
    with _memo_lock:
        _memo.clear()


# ---------------------------------------------------------------------------
# Defining-identity verification
# ---------------------------------------------------------------------------


def marginal_mean_check(link: LinkFunction, kappa: float, re: RandomEffectSpec,
                        adj: Adjustment | GammaShiftLaw, method: str = "quadrature",
                        order: int = 501, seed: int = 0, size: int = 10**6) -> float:
    """Numerically evaluate E[h(kappa + d'U + d'a)] for the given adjustment.

    ``method`` selects quadrature (dimension-reduced for normal laws) or
    plain seeded Monte Carlo over the q-dimensional law.  Callers assert the
    result against h(kappa) at the oracle's accuracy.
    """
    if isinstance(adj, GammaShiftLaw):
        # Reciprocal link: integrate 1/X against the gamma density.
        if link is not LinkFunction.RECIPROCAL:
            raise ValueError("gamma-law adjustments apply to the reciprocal link only")
        # absorb the 1/x factor into the weight: integrate t^(a-2) e^-t
        _, w = roots_genlaguerre(200, adj.shape - 2.0)
        return float(w.sum() / (adj.scale * math.gamma(adj.shape)))

    shift = adj.value
    law = re.law
    if method == "monte-carlo":
        rng = np.random.default_rng(seed)
        u = law.sample(rng, size)
        du = u @ re.design if isinstance(law, NormalLaw) else re.design[0] * u
        eta = kappa + du + shift
        hfun = np.vectorize(lambda e: inverse_link(link, e))
        vals = hfun(eta)
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError("non-finite integrand in Monte Carlo check")
        return float(vals.mean())

    if method != "quadrature":
        raise ValueError(f"unknown oracle method {method!r}")
    rule = gauss_hermite_rule(order)
    wts = rule.weights / math.sqrt(math.pi)
    hfun = np.vectorize(lambda e: inverse_link(link, e))
    if isinstance(law, NormalLaw):
        tau2 = effective_variance(re.design, law)
        if tau2 == 0.0:
            return inverse_link(link, kappa + shift)
        eta = kappa + shift + math.sqrt(2.0 * tau2) * rule.nodes
        return float(wts @ hfun(eta))
    if isinstance(law, NormalMixtureLaw):
        d = re.design[0]
        total = 0.0
        for wi, mi, vi in zip(law.weights, law.means, law.variances):
            if vi == 0.0:
                total += wi * inverse_link(link, kappa + shift + d * mi)
            else:
                eta = kappa + shift + d * mi + math.sqrt(2.0 * d * d * vi) * rule.nodes
                total += wi * float(wts @ hfun(eta))
        return total
    raise ValueError(f"unsupported law {type(law).__name__}")
