"""The generative MI-GLMM: data containers, model specification, and the
conditional/marginal mean and log-density evaluations the sampler consumes.

The conditional mean is h(x_i'beta + sum_l u_{l,g(i)} + shift_i), where the
shift is the marginal-interpretability adjustment (zero when the flag is
off, giving the conventional GLMM).  Random-effect levels are grouped
scalar intercepts; a level's variance parameter may differ across strata of
groups (e.g. one variance per treatment arm), selected through a per-group
stratum map.  Variances are carried on the log scale, matching their
normal priors.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, log_ndtr

from . import adjust
from .links import LinkFunction

_LOG_2PI = math.log(2.0 * math.pi)
NEG_INF = float("-inf")


class Family(enum.Enum):
    BERNOULLI = "bernoulli"
    BINOMIAL = "binomial"
    POISSON = "poisson"


_SUPPORTED_PAIRS = {
    Family.BERNOULLI: {LinkFunction.LOGIT, LinkFunction.PROBIT, LinkFunction.CLOGLOG},
    Family.BINOMIAL: {LinkFunction.LOGIT, LinkFunction.PROBIT, LinkFunction.CLOGLOG},
    Family.POISSON: {LinkFunction.LOG, LinkFunction.SQRT, LinkFunction.IDENTITY},
}


@dataclass(frozen=True)
class Dataset:
    """Responses, trials (binomial), fixed design, and grouping columns."""

    y: np.ndarray
    X: np.ndarray
    x_names: tuple[str, ...]
    trials: np.ndarray | None = None
    groups: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2 or X.shape[0] != y.size:
            raise ValueError(f"X must be (n, p) with n = {y.size}, got {X.shape}")
        if len(self.x_names) != X.shape[1]:
            raise ValueError("x_names must match the number of design columns")
        if self.trials is not None:
            m = np.asarray(self.trials, dtype=float)
            if m.shape != y.shape:
                raise ValueError("trials must align with y")
            object.__setattr__(self, "trials", m)
        if np.linalg.matrix_rank(X) < X.shape[1]:
            warnings.warn("fixed-effect design X is rank deficient", RuntimeWarning)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def x_matrix(self) -> np.ndarray:
        return self.X

    def validate_family(self, family: Family) -> None:
        y = self.y
        if family is Family.BINOMIAL:
            if self.trials is None:
                raise ValueError("binomial family requires per-observation trials")
            if np.any(y < 0) or np.any(y > self.trials):
                raise ValueError("binomial responses must satisfy 0 <= y <= trials")
        elif family is Family.BERNOULLI:
            if not np.all(np.isin(y, (0.0, 1.0))):
                raise ValueError("bernoulli responses must be 0/1")
        elif family is Family.POISSON:
            if np.any(y < 0) or np.any(y != np.floor(y)):
                raise ValueError("poisson responses must be nonnegative integers")


@dataclass(frozen=True)
class RandomEffectLevel:
    """One grouped scalar random intercept, with per-stratum variances.

    ``groups`` maps observation index to group index (0..G-1); ``strata``
    maps group index to the stratum whose variance parameter applies
    (all-zero for a single shared variance).
    """

    name: str
    groups: np.ndarray
    strata: np.ndarray | None = None

    def __post_init__(self):
        g = np.asarray(self.groups, dtype=np.int64)
        if g.ndim != 1 or g.min(initial=0) < 0:
            raise ValueError("groups must be a vector of nonnegative indices")
        n_groups = int(g.max()) + 1 if g.size else 0
        s = (np.zeros(n_groups, dtype=np.int64) if self.strata is None
             else np.asarray(self.strata, dtype=np.int64))
        if s.shape != (n_groups,):
            raise ValueError(f"strata must have one entry per group ({n_groups})")
        g.flags.writeable = False
        s.flags.writeable = False
        object.__setattr__(self, "groups", g)
        object.__setattr__(self, "strata", s)

    @property
    def n_groups(self) -> int:
        return self.strata.size

    @property
    def n_strata(self) -> int:
        return int(self.strata.max()) + 1 if self.strata.size else 0

    def stratum_of_group(self, group_idx: np.ndarray) -> np.ndarray:
        return self.strata[group_idx]


@dataclass(frozen=True)
class NormalPrior:
    mean: float
    var: float

    def __post_init__(self):
        if not self.var > 0:
            raise ValueError(f"prior variance must be > 0, got {self.var}")

    def logpdf(self, x: float) -> float:
        return -0.5 * ((x - self.mean) ** 2 / self.var + math.log(self.var) + _LOG_2PI)


@dataclass(frozen=True)
class ModelSpec:
    """Family, link, random-effect levels, priors, and the MI flag."""

    family: Family
    link: LinkFunction
    re_levels: tuple[RandomEffectLevel, ...]
    beta_priors: tuple[NormalPrior, ...]
    logvar_priors: tuple[NormalPrior, ...]
    marginally_interpretable: bool = True

    def __post_init__(self):
        if self.link not in _SUPPORTED_PAIRS[self.family]:
            raise ValueError(
                f"unsupported family/link pair: {self.family.value} with {self.link.value}"
            )
        if len(self.logvar_priors) != self.n_variance_params:
            raise ValueError(
                f"need {self.n_variance_params} log-variance priors, got {len(self.logvar_priors)}"
            )

    @property
    def p(self) -> int:
        return len(self.beta_priors)

    @property
    def n_variance_params(self) -> int:
        return sum(level.n_strata for level in self.re_levels)

    @property
    def n_effects(self) -> int:
        return sum(level.n_groups for level in self.re_levels)

    def var_slices(self) -> list[slice]:
        out, at = [], 0
        for level in self.re_levels:
            out.append(slice(at, at + level.n_strata))
            at += level.n_strata
        return out

    def u_slices(self) -> list[slice]:
        out, at = [], 0
        for level in self.re_levels:
            out.append(slice(at, at + level.n_groups))
            at += level.n_groups
        return out

    def validate_state(self, state: "ParamState") -> None:
        if state.beta.shape != (self.p,):
            raise ValueError(f"beta must have shape ({self.p},), got {state.beta.shape}")
        if state.log_sigma2.shape != (self.n_variance_params,):
            raise ValueError(
                f"log_sigma2 must have shape ({self.n_variance_params},), got {state.log_sigma2.shape}"
            )
        if state.u.shape != (self.n_effects,):
            raise ValueError(f"u must have shape ({self.n_effects},), got {state.u.shape}")


@dataclass
class ParamState:
    """theta = (beta, alpha, U); variances are stored as log(sigma^2)."""

    beta: np.ndarray
    log_sigma2: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        self.log_sigma2 = np.asarray(self.log_sigma2, dtype=float)
        self.u = np.asarray(self.u, dtype=float)

    @property
    def sigma2(self) -> np.ndarray:
        return np.exp(self.log_sigma2)

    def copy(self) -> "ParamState":
        return ParamState(self.beta.copy(), self.log_sigma2.copy(), self.u.copy())


def obs_variance(spec: ModelSpec, state: ParamState) -> np.ndarray:
    """Total random-effect variance per observation across levels."""
    n = spec.re_levels[0].groups.size if spec.re_levels else 0
    total = np.zeros(n)
    sig2 = state.sigma2
    for level, vsl in zip(spec.re_levels, spec.var_slices()):
        total += sig2[vsl][level.stratum_of_group(level.groups)]
    return total


def random_effect_sum(spec: ModelSpec, state: ParamState) -> np.ndarray:
    """Per-observation sum of the level effects u_{l, g_l(i)}."""
    n = spec.re_levels[0].groups.size if spec.re_levels else 0
    total = np.zeros(n)
    for level, usl in zip(spec.re_levels, spec.u_slices()):
        total += state.u[usl][level.groups]
    return total


def adjustment_shifts(spec: ModelSpec, kappa: np.ndarray, tau2: np.ndarray) -> np.ndarray:
    """Per-observation adjustment d'a for the spec's link (zero when MI off)."""
    if not spec.marginally_interpretable:
        return np.zeros_like(kappa)
    link = spec.link
    if link is LinkFunction.IDENTITY:
        return np.zeros_like(kappa)
    if link is LinkFunction.LOG:
        return -0.5 * tau2
    if link is LinkFunction.PROBIT:
        return (np.sqrt(1.0 + tau2) - 1.0) * kappa
    # kappa-dependent solves; observations sharing (kappa, tau2) hit the memo
    out = np.empty_like(kappa)
    for i in range(kappa.size):
        out[i] = adjust.linear_shift(link, float(kappa[i]), float(tau2[i]))
    return out


def linear_predictors(spec: ModelSpec, state: ParamState, data: Dataset) -> np.ndarray:
    """eta_i = x_i'beta + sum_l u_{l,g(i)} + shift_i for every observation."""
    kappa = data.X @ state.beta
    if spec.re_levels:
        tau2 = obs_variance(spec, state)
        return kappa + random_effect_sum(spec, state) + adjustment_shifts(spec, kappa, tau2)
    return kappa


def conditional_mean(spec: ModelSpec, state: ParamState, data: Dataset, i: int) -> float:
    """E(Y_i | U) = h(x_i'beta + u-sum + shift) for one observation."""
    eta = float(linear_predictors(spec, state, data)[i])
    return _mean_from_eta(spec.link, np.array([eta]))[0]


def _mean_from_eta(link: LinkFunction, eta: np.ndarray) -> np.ndarray:
    if link is LinkFunction.LOGIT:
        out = np.empty_like(eta)
        pos = eta >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
        z = np.exp(eta[~pos])
        out[~pos] = z / (1.0 + z)
        return out
    if link is LinkFunction.PROBIT:
        from scipy.special import ndtr
        return ndtr(eta)
    if link is LinkFunction.CLOGLOG:
        with np.errstate(over="ignore"):
            return -np.expm1(-np.exp(eta))
    if link is LinkFunction.LOG:
        return np.exp(eta)
    if link is LinkFunction.SQRT:
        # h extends to negative eta: eta^2 is still a valid Poisson mean
        return eta * eta
    if link is LinkFunction.IDENTITY:
        return eta.copy()
    raise ValueError(f"unsupported link {link}")


def loglik_terms(spec: ModelSpec, state: ParamState, data: Dataset,
                 eta: np.ndarray | None = None) -> np.ndarray:
    """Per-observation log f(y_i | mu_i); -inf marks an invalid boundary."""
    if eta is None:
        eta = linear_predictors(spec, state, data)
    y = data.y
    link = spec.link
    family = spec.family

    if family in (Family.BERNOULLI, Family.BINOMIAL):
        m = data.trials if family is Family.BINOMIAL else np.ones_like(y)
        coef = data_binom_coef(data) if family is Family.BINOMIAL else 0.0
        if link is LinkFunction.LOGIT:
            # y*eta - m*log(1 + e^eta), stable in both tails
            return coef + y * eta - m * np.logaddexp(0.0, eta)
        if link is LinkFunction.PROBIT:
            return coef + y * log_ndtr(eta) + (m - y) * log_ndtr(-eta)
        if link is LinkFunction.CLOGLOG:
            with np.errstate(over="ignore", divide="ignore"):
                log_q = -np.exp(eta)                     # log(1 - mu), exact
                log_mu = np.log(-np.expm1(log_q))
            terms = coef + y * log_mu + (m - y) * log_q
            return np.where(np.isnan(terms), NEG_INF, terms)
        raise ValueError(f"unsupported link {link} for {family}")

    # Poisson
    mu = _mean_from_eta(link, eta)
    if link is LinkFunction.LOG:
        return y * eta - mu - gammaln(y + 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_mu = np.log(mu)
    terms = y * log_mu - mu - gammaln(y + 1.0)
    bad = (mu < 0) | ((mu == 0) & (y > 0)) | np.isnan(terms)
    zero_ok = (mu == 0) & (y == 0)
    terms = np.where(zero_ok, 0.0, terms)
    return np.where(bad & ~zero_ok, NEG_INF, terms)


_binom_coef_cache: dict[int, np.ndarray] = {}


def data_binom_coef(data: Dataset) -> np.ndarray:
    key = id(data)
    hit = _binom_coef_cache.get(key)
    if hit is None:
        m, y = data.trials, data.y
        hit = gammaln(m + 1.0) - gammaln(y + 1.0) - gammaln(m - y + 1.0)
        _binom_coef_cache[key] = hit
    return hit


def log_likelihood(spec: ModelSpec, state: ParamState, data: Dataset) -> float:
    """Sum of conditional log densities; -inf (not an exception) on boundary."""
    if not (np.all(np.isfinite(state.beta)) and np.all(np.isfinite(state.log_sigma2))
            and np.all(np.isfinite(state.u))):
        raise FloatingPointError("non-finite parameter in state")
    terms = loglik_terms(spec, state, data)
    if np.any(terms == NEG_INF):
        return NEG_INF
    return float(terms.sum())


def log_prior(spec: ModelSpec, state: ParamState) -> float:
    """Normal priors on beta and log-variances plus the U density terms."""
    lp = sum(pr.logpdf(float(b)) for pr, b in zip(spec.beta_priors, state.beta))
    lp += sum(pr.logpdf(float(a)) for pr, a in zip(spec.logvar_priors, state.log_sigma2))
    sig2 = state.sigma2
    for level, vsl, usl in zip(spec.re_levels, spec.var_slices(), spec.u_slices()):
        v = sig2[vsl][level.strata]
        ug = state.u[usl]
        lp += float(-0.5 * np.sum(ug * ug / v + np.log(v) + _LOG_2PI))
    return float(lp)


def log_joint(spec: ModelSpec, state: ParamState, data: Dataset) -> float:
    ll = log_likelihood(spec, state, data)
    if ll == NEG_INF:
        return NEG_INF
    return ll + log_prior(spec, state)


def marginal_mean(spec: ModelSpec, beta: np.ndarray, x: np.ndarray) -> float:
    """h(x'beta): the population-averaged mean; requires the MI flag on."""
    if not spec.marginally_interpretable:
        raise ValueError("marginal_mean requires a marginally interpretable spec")
    eta = float(np.asarray(x, dtype=float) @ np.asarray(beta, dtype=float))
    return float(_mean_from_eta(spec.link, np.array([eta]))[0])
