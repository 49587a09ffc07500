"""Random-effect distribution families shared across the package.

These are plain containers with validation and sampling; no integration or
adjustment logic lives here, so both the production modules and the
independent test oracles can depend on them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class NormalLaw:
    """Mean-zero multivariate normal law with covariance ``cov`` (q x q)."""

    cov: np.ndarray

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ValueError(f"covariance must be square, got shape {cov.shape}")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        eigmin = float(np.linalg.eigvalsh(cov).min()) if cov.size else 0.0
        if eigmin < -1e-10:
            raise ValueError(f"covariance must be positive semidefinite (min eigenvalue {eigmin})")
        cov.flags.writeable = False
        object.__setattr__(self, "cov", cov)

    @classmethod
    def scalar(cls, variance: float) -> "NormalLaw":
        if variance < 0:
            raise ValueError(f"variance must be >= 0, got {variance}")
        return cls(np.array([[float(variance)]]))

    @property
    def dim(self) -> int:
        return self.cov.shape[0]

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` vectors; shape (size, q)."""
        return rng.multivariate_normal(np.zeros(self.dim), self.cov, size=size,
                                       method="cholesky" if _is_pd(self.cov) else "svd")


def _is_pd(cov: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(cov)
        return True
    except np.linalg.LinAlgError:
        return False


@dataclass(frozen=True)
class NormalMixtureLaw:
    """Scalar finite mixture of normals with overall mean zero.

    Component m has weight ``weights[m]``, mean ``means[m]``, and variance
    ``variances[m]``; weights must be positive and sum to one, and the
    mixture mean sum(w*mu) must vanish.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        v = np.asarray(self.variances, dtype=float)
        if not (w.shape == mu.shape == v.shape) or w.ndim != 1 or w.size == 0:
            raise ValueError("weights, means, variances must be equal-length 1-D arrays")
        if np.any(w <= 0):
            raise ValueError("mixture weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights must sum to 1, got {w.sum()}")
        if np.any(v < 0):
            raise ValueError("mixture variances must be >= 0")
        mean = float(w @ mu)
        if abs(mean) > 1e-12:
            raise ValueError(f"mixture must have mean zero, got {mean}")
        for arr in (w, mu, v):
            arr.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", v)

    @property
    def k(self) -> int:
        return self.weights.size

    def variance(self) -> float:
        return float(self.weights @ (self.variances + self.means**2))

    def log_mgf(self, t: float = 1.0) -> float:
        """log E[exp(t U)]; always finite for a finite normal mixture."""
        exponents = t * self.means + 0.5 * t * t * self.variances
        m = exponents.max()
        return m + np.log(self.weights @ np.exp(exponents - m))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        comp = rng.choice(self.k, size=size, p=self.weights)
        return self.means[comp] + np.sqrt(self.variances[comp]) * rng.standard_normal(size)


@dataclass(frozen=True)
class GammaShiftLaw:
    """Law of U such that shift + U ~ Gamma(shape, scale).

    Used with the reciprocal link, where the random-effect distribution's
    shape (not its location) varies with the fixed effects.  ``scale`` may
    be None when the law only records the requested shape parameter.
    """

    shape: float
    scale: float | None = None
    shift: float = 0.0

    def __post_init__(self):
        if self.shape <= 1.0:
            raise ValueError(f"gamma shape must be > 1 so that E[1/X] exists, got {self.shape}")
        if self.scale is not None and self.scale <= 0:
            raise ValueError(f"gamma scale must be > 0, got {self.scale}")

    def mean(self) -> float:
        if self.scale is None:
            raise ValueError("scale not set")
        return self.shape * self.scale - self.shift

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.scale is None:
            raise ValueError("scale not set")
        return rng.gamma(self.shape, self.scale, size) - self.shift
