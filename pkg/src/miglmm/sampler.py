"""Block Metropolis-Hastings sampler for pi(beta, alpha, U | Y).

One iteration cycles three blocks: beta (optionally with the consistent
joint (beta, U) proposal that leaves every linear predictor unchanged),
alpha = log-variances, and the random effects U updated group by group.
All proposals are symmetric normal random walks, so acceptance reduces to
the ratio of joint densities; adjustments are recomputed under every
proposal when the model is marginally interpretable.

Proposal scales adapt during burn-in only (Robbins-Monro toward 35%
acceptance) and freeze afterwards, keeping the post-burn-in kernel a valid
fixed MH kernel.  Randomness comes from per-block PCG64 streams spawned
from one seed, so chains are bit-reproducible.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .model import (
    NEG_INF,
    Dataset,
    ModelSpec,
    ParamState,
    adjustment_shifts,
    loglik_terms,
    obs_variance,
    random_effect_sum,
)
from .links import LinkFunction

_TARGET_ACCEPT = 0.35
_WARN_WINDOW = 10_000


class ConfigError(ValueError):
    """Invalid sampler configuration for the given model/data."""


@dataclass(frozen=True)
class McmcConfig:
    steps: int
    burn_in: int
    thin: int = 1
    seed: int = 0
    beta_scale: float = 0.1
    logvar_scale: float = 0.4
    u_scale: float = 0.5
    adapt: bool = True
    consistent_proposals: bool = False
    store_u: bool = False

    def __post_init__(self):
        if not 0 <= self.burn_in < self.steps:
            raise ValueError(f"need 0 <= burn_in < steps, got {self.burn_in} / {self.steps}")
        if self.thin < 1:
            raise ValueError(f"thin must be >= 1, got {self.thin}")
        for name in ("beta_scale", "logvar_scale", "u_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    @property
    def n_draws(self) -> int:
        return (self.steps - self.burn_in) // self.thin


@dataclass
class ChainOutput:
    draws: np.ndarray
    columns: tuple[str, ...]
    accept_counts: dict[str, int]
    proposal_counts: dict[str, int]
    wall_time: float
    config: McmcConfig
    final_scales: dict[str, float]
    warnings: list[str] = field(default_factory=list)

    def acceptance_rate(self, block: str) -> float:
        n = self.proposal_counts.get(block, 0)
        return self.accept_counts.get(block, 0) / n if n else float("nan")

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.columns.index(name)]


def mh_block_step(target, state: ParamState, block: str, rng: np.random.Generator,
                  scale: float = 0.1) -> tuple[ParamState, bool]:
    """One symmetric random-walk Metropolis step on the named block.

    ``target`` maps a ParamState to a log density.  With a symmetric
    proposal the q-ratio cancels, so the move is accepted with probability
    min(1, exp(delta)); a non-finite proposal density is a rejection, never
    an error.  The current density must be finite.
    """
    lp_cur = target(state)
    if not math.isfinite(lp_cur):
        raise ValueError("current state has non-finite log density")
    cand = state.copy()
    if block == "beta":
        cand.beta = cand.beta + scale * rng.standard_normal(cand.beta.size)
    elif block == "alpha":
        cand.log_sigma2 = cand.log_sigma2 + scale * rng.standard_normal(cand.log_sigma2.size)
    elif block == "u":
        cand.u = cand.u + scale * rng.standard_normal(cand.u.size)
    else:
        raise ValueError(f"unknown block {block!r}")
    lp_new = target(cand)
    if not math.isfinite(lp_new) and lp_new != NEG_INF:
        lp_new = NEG_INF
    delta = lp_new - lp_cur
    if delta >= 0.0 or math.log(rng.uniform()) < delta:
        return cand, True
    return state, False


def propose_beta_consistent(state: ParamState, beta_star: np.ndarray, spec: ModelSpec,
                            data: Dataset) -> ParamState:
    """Candidate state whose random effects absorb the beta shift.

    Each subject effect picks up x_first'(beta - beta*), and each
    within-subject effect the residual per-observation shift, so every
    linear predictor is unchanged and the likelihood is invariant.
    """
    _validate_consistent_structure(spec, data)
    beta_star = np.asarray(beta_star, dtype=float)
    diff = state.beta - beta_star
    cand = state.copy()
    cand.beta = beta_star

    lev0 = spec.re_levels[0]
    u_slices = spec.u_slices()
    _, first_idx = np.unique(lev0.groups, return_index=True)
    gamma_shift = data.X[first_idx] @ diff
    cand.u[u_slices[0]] = state.u[u_slices[0]] + gamma_shift
    if len(spec.re_levels) == 2:
        delta_shift = (data.X - data.X[first_idx][lev0.groups]) @ diff
        cand.u[u_slices[1]] = state.u[u_slices[1]] + delta_shift
    return cand


def _validate_consistent_structure(spec: ModelSpec, data: Dataset) -> None:
    if spec.marginally_interpretable and spec.link is not LinkFunction.LOG:
        raise ConfigError(
            "consistent proposals require an adjustment independent of x'beta (log link)"
        )
    if not 1 <= len(spec.re_levels) <= 2:
        raise ConfigError("consistent proposals support one or two random-effect levels")
    if len(spec.re_levels) == 2:
        lev1 = spec.re_levels[1]
        if not np.array_equal(lev1.groups, np.arange(data.n)):
            raise ConfigError(
                "with two levels, the second must be a per-observation effect"
            )


def iact(series) -> float:
    """Integrated autocorrelation time 1 + 2 sum rho_k.

    The sum is truncated by the initial-positive-sequence rule: paired sums
    rho_{2m} + rho_{2m+1} enter while positive, and the first nonpositive
    pair stops the sum.  A constant series returns 1 with a warning.
    """
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < 100:
        raise ValueError(f"need at least 100 points for an IACT estimate, got {n}")
    x = x - x.mean()
    if np.all(x == 0.0):
        warnings.warn("constant series: IACT degenerate, returning 1", RuntimeWarning)
        return 1.0
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n]
    rho = acov / acov[0]
    tau = -1.0
    for k in range(0, n - 1, 2):
        paired = rho[k] + rho[k + 1]
        if paired <= 0.0:
            break
        tau += 2.0 * paired
    return max(tau, 1.0)


# ---------------------------------------------------------------------------
# The production chain
# ---------------------------------------------------------------------------


class _BlockState:
    """Cached quantities for the current chain state."""

    __slots__ = ("state", "kappa", "eta", "terms", "ll")

    def __init__(self, spec, data, state):
        self.state = state
        self.refresh(spec, data)

    def refresh(self, spec, data):
        st = self.state
        self.kappa = data.X @ st.beta
        tau2 = obs_variance(spec, st)
        shifts = adjustment_shifts(spec, self.kappa, tau2)
        self.eta = self.kappa + random_effect_sum(spec, st) + shifts
        self.terms = loglik_terms(spec, st, data, eta=self.eta)
        self.ll = _sum_terms(self.terms)


def _sum_terms(terms: np.ndarray) -> float:
    return NEG_INF if np.any(terms == NEG_INF) else float(terms.sum())


def _beta_prior(spec, beta) -> float:
    return sum(pr.logpdf(float(b)) for pr, b in zip(spec.beta_priors, beta))


def _logvar_prior(spec, log_sigma2) -> float:
    return sum(pr.logpdf(float(a)) for pr, a in zip(spec.logvar_priors, log_sigma2))


def _u_prior(spec, state) -> float:
    total = 0.0
    sig2 = state.sigma2
    for level, vsl, usl in zip(spec.re_levels, spec.var_slices(), spec.u_slices()):
        v = sig2[vsl][level.strata]
        ug = state.u[usl]
        total += float(-0.5 * np.sum(ug * ug / v + np.log(v)))
    return total  # constant -log(2 pi)/2 terms cancel in MH ratios


def initial_state(spec: ModelSpec) -> ParamState:
    beta0 = np.array([pr.mean for pr in spec.beta_priors], dtype=float)
    logv0 = np.array([pr.mean for pr in spec.logvar_priors], dtype=float)
    return ParamState(beta0, logv0, np.zeros(spec.n_effects))


def run_chain(spec: ModelSpec, data: Dataset, config: McmcConfig,
              start: ParamState | None = None, progress: bool = False) -> ChainOutput:
    """Run the beta -> alpha -> U block cycle; deterministic given the seed."""
    data.validate_family(spec.family)
    if config.consistent_proposals:
        _validate_consistent_structure(spec, data)

    t_start = time.perf_counter()
    ss = np.random.SeedSequence(config.seed)
    rng_beta, rng_alpha, rng_u = (np.random.Generator(np.random.PCG64(s))
                                  for s in ss.spawn(3))

    state = initial_state(spec) if start is None else start.copy()
    spec.validate_state(state)
    cache = _BlockState(spec, data, state)
    if cache.ll == NEG_INF:
        raise ConfigError("initial state has zero likelihood")

    b_prior = _beta_prior(spec, state.beta)
    v_prior = _logvar_prior(spec, state.log_sigma2)
    u_prior = _u_prior(spec, state)

    u_slices = spec.u_slices()
    var_slices = spec.var_slices()
    level_strata = [lev.strata for lev in spec.re_levels]
    level_groups = [lev.groups for lev in spec.re_levels]
    n_groups = [lev.n_groups for lev in spec.re_levels]

    log_scales = {
        "beta": math.log(config.beta_scale),
        "alpha": math.log(config.logvar_scale),
        "u": math.log(config.u_scale),
    }
    accept = {"beta": 0, "alpha": 0, "u": 0}
    proposed = {"beta": 0, "alpha": 0, "u": 0}
    window_beta_accepts = 0
    chain_warnings: list[str] = []

    p = spec.p
    n_var = spec.n_variance_params
    columns = tuple(f"beta_{i}" for i in range(p)) + tuple(
        f"sigma2_{k}" for k in range(n_var)
    )
    if config.store_u:
        columns = columns + tuple(f"u_{j}" for j in range(spec.n_effects))
    draws = np.empty((config.n_draws, len(columns)))
    kept = 0

    for step in range(1, config.steps + 1):
        adapting = config.adapt and step <= config.burn_in
        gamma = min(0.2, 2.0 / math.sqrt(step)) if adapting else 0.0

        # ---- beta block ------------------------------------------------
        scale = math.exp(log_scales["beta"])
        beta_star = state.beta + scale * rng_beta.standard_normal(p)
        if config.consistent_proposals:
            cand = propose_beta_consistent(state, beta_star, spec, data)
        else:
            cand = state.copy()
            cand.beta = beta_star
        kappa_new = data.X @ beta_star
        tau2 = obs_variance(spec, cand)
        shifts = adjustment_shifts(spec, kappa_new, tau2)
        eta_new = kappa_new + random_effect_sum(spec, cand) + shifts
        terms_new = loglik_terms(spec, cand, data, eta=eta_new)
        ll_new = _sum_terms(terms_new)
        b_prior_new = _beta_prior(spec, beta_star)
        u_prior_new = _u_prior(spec, cand) if config.consistent_proposals else u_prior
        delta = (ll_new + b_prior_new + u_prior_new) - (cache.ll + b_prior + u_prior)
        proposed["beta"] += 1
        accepted = delta >= 0.0 or math.log(rng_beta.uniform()) < delta
        if accepted:
            state = cand
            cache.state = state
            cache.kappa, cache.eta, cache.terms, cache.ll = kappa_new, eta_new, terms_new, ll_new
            b_prior, u_prior = b_prior_new, u_prior_new
            accept["beta"] += 1
            window_beta_accepts += 1
        if adapting:
            log_scales["beta"] += gamma * ((1.0 if accepted else 0.0) - _TARGET_ACCEPT)
        if step % _WARN_WINDOW == 0:
            if window_beta_accepts == 0:
                chain_warnings.append(
                    f"beta block: no acceptances in steps {step - _WARN_WINDOW + 1}..{step}"
                )
            window_beta_accepts = 0

        # ---- alpha block -----------------------------------------------
        if n_var:
            scale = math.exp(log_scales["alpha"])
            cand = state.copy()
            cand.log_sigma2 = state.log_sigma2 + scale * rng_alpha.standard_normal(n_var)
            tau2 = obs_variance(spec, cand)
            shifts = adjustment_shifts(spec, cache.kappa, tau2)
            eta_new = cache.kappa + random_effect_sum(spec, cand) + shifts
            terms_new = loglik_terms(spec, cand, data, eta=eta_new)
            ll_new = _sum_terms(terms_new)
            v_prior_new = _logvar_prior(spec, cand.log_sigma2)
            u_prior_new = _u_prior(spec, cand)
            delta = (ll_new + v_prior_new + u_prior_new) - (cache.ll + v_prior + u_prior)
            proposed["alpha"] += 1
            accepted = delta >= 0.0 or math.log(rng_alpha.uniform()) < delta
            if accepted:
                state = cand
                cache.state = state
                cache.eta, cache.terms, cache.ll = eta_new, terms_new, ll_new
                v_prior, u_prior = v_prior_new, u_prior_new
                accept["alpha"] += 1
            if adapting:
                log_scales["alpha"] += gamma * ((1.0 if accepted else 0.0) - _TARGET_ACCEPT)

        # ---- U block: one Metropolis decision per group, vectorized ----
        if spec.n_effects:
            scale = math.exp(log_scales["u"])
            sig2 = state.sigma2
            accepted_groups = 0
            for li, usl in enumerate(u_slices):
                groups = level_groups[li]
                g_count = n_groups[li]
                u_cur = state.u[usl]
                step_g = scale * rng_u.standard_normal(g_count)
                u_new = u_cur + step_g
                eta_new = cache.eta + step_g[groups]
                terms_new = loglik_terms(spec, state, data, eta=eta_new)
                diff = terms_new - cache.terms
                diff[np.isnan(diff)] = NEG_INF  # -inf proposal over -inf current
                dll = np.bincount(groups, weights=np.where(np.isfinite(diff), diff, 0.0),
                                  minlength=g_count)
                bad = np.bincount(groups, weights=(~np.isfinite(diff)).astype(float),
                                  minlength=g_count) > 0
                dll[bad] = NEG_INF
                v = sig2[var_slices[li]][level_strata[li]]
                dprior = -0.5 * (u_new * u_new - u_cur * u_cur) / v
                log_u = np.log(rng_u.uniform(size=g_count))
                ok = log_u < (dll + dprior)
                if np.any(ok):
                    state.u[usl][ok] = u_new[ok]
                    obs_ok = ok[groups]
                    cache.eta = np.where(obs_ok, eta_new, cache.eta)
                    cache.terms = np.where(obs_ok, terms_new, cache.terms)
                accepted_groups += int(ok.sum())
            cache.ll = _sum_terms(cache.terms)
            u_prior = _u_prior(spec, state)
            proposed["u"] += spec.n_effects
            accept["u"] += accepted_groups
            if adapting:
                log_scales["u"] += gamma * (accepted_groups / spec.n_effects - _TARGET_ACCEPT)

        # ---- retention ---------------------------------------------------
        if step > config.burn_in and (step - config.burn_in) % config.thin == 0:
            row = np.concatenate([state.beta, np.exp(state.log_sigma2),
                                  state.u if config.store_u else ()])
            draws[kept] = row
            kept += 1
        if progress and step % 50_000 == 0:
            print(f"  step {step}/{config.steps}")

    return ChainOutput(
        draws=draws[:kept],
        columns=columns,
        accept_counts=accept,
        proposal_counts=proposed,
        wall_time=time.perf_counter() - t_start,
        config=config,
        final_scales={k: math.exp(v) for k, v in log_scales.items()},
        warnings=chain_warnings,
    )
