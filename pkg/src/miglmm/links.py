"""Link functions g, inverse links h, and their domain/range checks.

Seven links are supported: identity, log, probit, logit, complementary
log-log, square root, and reciprocal.  The bounded-range links (probit,
logit, cloglog) map all reals into (0,1).  The square root and reciprocal
links restrict the linear predictor to eta >= 0 and eta > 0 respectively.

All functions here are pure and stateless.
"""

from __future__ import annotations

import enum
import math


class LinkDomainError(ValueError):
    """Argument outside a link's domain (for h) or range (for g)."""


class LinkFunction(enum.Enum):
    """Supported link functions, named by their config-file strings."""

    IDENTITY = "identity"
    LOG = "log"
    PROBIT = "probit"
    LOGIT = "logit"
    CLOGLOG = "cloglog"
    SQRT = "sqrt"
    RECIPROCAL = "reciprocal"

    @classmethod
    def from_name(cls, name: str) -> "LinkFunction":
        try:
            return cls(name.strip().lower())
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise LinkDomainError(f"unknown link {name!r}; expected one of: {valid}") from None


_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def normal_cdf(x: float) -> float:
    """Standard normal CDF via erfc; absolute accuracy near machine level."""
    return 0.5 * math.erfc(-x / _SQRT2)


def normal_pdf(x: float) -> float:
    """Standard normal density."""
    return _INV_SQRT_2PI * math.exp(-0.5 * x * x)


# Acklam's rational approximation to the standard normal quantile,
# polished below by one Newton step against normal_cdf.
_ACKLAM_A = (
    -3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
    1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00,
)
_ACKLAM_B = (
    -5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
    6.680131188771972e01, -1.328068155288572e01,
)
_ACKLAM_C = (
    -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
    -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00,
)
_ACKLAM_D = (
    7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
    3.754408661907416e00,
)


def normal_quantile(p: float) -> float:
    """Standard normal quantile, accurate to ~1e-15 after one Newton step."""
    if not 0.0 < p < 1.0:
        raise LinkDomainError(f"normal quantile requires 0 < p < 1, got {p}")
    a, b, c, d = _ACKLAM_A, _ACKLAM_B, _ACKLAM_C, _ACKLAM_D
    plow, phigh = 0.02425, 1.0 - 0.02425
    if p < plow:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        )
    elif p > phigh:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        )
    else:
        q = p - 0.5
        r = q * q
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / (
            ((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0
        )
    # One Newton polish; skip where the density underflows (deep tails).
    dens = normal_pdf(x)
    if dens > 1e-300:
        x -= (normal_cdf(x) - p) / dens
    return x


def inverse_link(link: LinkFunction, eta: float) -> float:
    """Evaluate mu = h(eta) for the given link.

    Raises LinkDomainError when eta is outside the link's domain
    (eta < 0 for sqrt, eta <= 0 for reciprocal).
    """
    if link is LinkFunction.IDENTITY:
        return eta
    if link is LinkFunction.LOG:
        return math.exp(eta)
    if link is LinkFunction.PROBIT:
        return normal_cdf(eta)
    if link is LinkFunction.LOGIT:
        # Two-branch form: never exponentiates a large positive argument.
        if eta >= 0.0:
            return 1.0 / (1.0 + math.exp(-eta))
        z = math.exp(eta)
        return z / (1.0 + z)
    if link is LinkFunction.CLOGLOG:
        return -math.expm1(-math.exp(eta))
    if link is LinkFunction.SQRT:
        if eta < 0.0:
            raise LinkDomainError(f"sqrt link requires eta >= 0, got {eta}")
        return eta * eta
    if link is LinkFunction.RECIPROCAL:
        if eta <= 0.0:
            raise LinkDomainError(f"reciprocal link requires eta > 0, got {eta}")
        return 1.0 / eta
    raise LinkDomainError(f"unknown link {link!r}")


def apply_link(link: LinkFunction, mu: float) -> float:
    """Evaluate eta = g(mu); mu must lie in the interior of the link's range."""
    if link is LinkFunction.IDENTITY:
        return mu
    if link is LinkFunction.LOG:
        if mu <= 0.0:
            raise LinkDomainError(f"log link requires mu > 0, got {mu}")
        return math.log(mu)
    if link is LinkFunction.PROBIT:
        if not 0.0 < mu < 1.0:
            raise LinkDomainError(f"probit link requires 0 < mu < 1, got {mu}")
        return normal_quantile(mu)
    if link is LinkFunction.LOGIT:
        if not 0.0 < mu < 1.0:
            raise LinkDomainError(f"logit link requires 0 < mu < 1, got {mu}")
        return math.log(mu) - math.log1p(-mu)
    if link is LinkFunction.CLOGLOG:
        if not 0.0 < mu < 1.0:
            raise LinkDomainError(f"cloglog link requires 0 < mu < 1, got {mu}")
        return math.log(-math.log1p(-mu))
    if link is LinkFunction.SQRT:
        if mu <= 0.0:
            raise LinkDomainError(f"sqrt link requires mu > 0, got {mu}")
        return math.sqrt(mu)
    if link is LinkFunction.RECIPROCAL:
        if mu <= 0.0:
            raise LinkDomainError(f"reciprocal link requires mu > 0, got {mu}")
        return 1.0 / mu
    raise LinkDomainError(f"unknown link {link!r}")
