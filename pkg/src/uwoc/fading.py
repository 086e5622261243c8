"""Log-normal turbulence fading and moment-matched weighted sums.

The fading coefficient is ``h = exp(2X)`` with ``X ~ Normal(mu_X, sigma_X2)``.
Normalising ``E[h] = 1`` pins ``mu_X = -sigma_X2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FadingSpec:
    """Log-amplitude statistics of one link; the mean follows the variance."""

    sigma_X2: float

    def __post_init__(self):
        if not self.sigma_X2 >= 0:
            raise ValueError("sigma_X2 must be >= 0")

    @property
    def mu_X(self) -> float:
        return -self.sigma_X2

    @property
    def sigma_X(self) -> float:
        return math.sqrt(self.sigma_X2)

    @classmethod
    def from_sigma(cls, sigma_X: float) -> "FadingSpec":
        return cls(sigma_X2=sigma_X * sigma_X)

    # common (mu, sigma2) view shared with LognormalEquivalent
    @property
    def mu(self) -> float:
        return self.mu_X

    @property
    def sigma2(self) -> float:
        return self.sigma_X2


@dataclass(frozen=True)
class LognormalEquivalent:
    """Log-normal ``alpha = exp(2z)``, ``z ~ Normal(mu_z, sigma_z2)``."""

    mu_z: float
    sigma_z2: float

    def __post_init__(self):
        if not self.sigma_z2 >= 0:
            raise ValueError("sigma_z2 must be >= 0")

    @property
    def mu(self) -> float:
        return self.mu_z

    @property
    def sigma2(self) -> float:
        return self.sigma_z2

    @property
    def mean(self) -> float:
        return math.exp(2 * self.mu_z + 2 * self.sigma_z2)

    @property
    def variance(self) -> float:
        return math.exp(4 * self.mu_z + 4 * self.sigma_z2) * math.expm1(4 * self.sigma_z2)

    def cdf(self, x):
        """CDF of ``alpha``; ``ln(alpha)`` is Normal(2 mu_z, 4 sigma_z2)."""
        from scipy.special import ndtr

        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            lx = np.log(np.where(x > 0, x, 0.0))
        if self.sigma_z2 == 0:
            return (lx >= 2 * self.mu_z).astype(float)
        return ndtr((lx - 2 * self.mu_z) / (2 * math.sqrt(self.sigma_z2)))


def lognormal_pdf(h, spec: FadingSpec):
    """Density of the fading coefficient at ``h > 0``."""
    s2 = spec.sigma_X2
    if s2 == 0:
        raise ValueError("density undefined for sigma_X2 = 0 (point mass at 1)")
    h = np.asarray(h, dtype=float)
    if np.any(h <= 0):
        raise ValueError("h must be positive")
    out = np.exp(-((np.log(h) - 2 * spec.mu_X) ** 2) / (8 * s2)) / (
        2 * h * math.sqrt(2 * math.pi * s2)
    )
    return float(out) if out.ndim == 0 else out


def sample_fading(spec: FadingSpec, rng: np.random.Generator, size=None):
    """Draw fading coefficients; exactly 1 when the variance is zero."""
    if spec.sigma_X2 == 0:
        return 1.0 if size is None else np.ones(size)
    x = rng.normal(spec.mu_X, spec.sigma_X, size=size)
    return np.exp(2 * x)


def fw_equivalent(weights, specs) -> LognormalEquivalent:
    """Fenton-Wilkinson log-normal matching the first two moments of ``sum(G h)``.

    Each ``h`` has unit mean, so the total mean is ``sum(G)`` and the variance
    is ``sum(G**2 * (exp(4 sigma_X2) - 1))`` under independence.
    """
    G = np.asarray(weights, dtype=float).ravel()
    specs = list(specs)
    if G.size == 0:
        raise ValueError("fw_equivalent needs at least one term")
    if len(specs) != G.size:
        raise ValueError("weights and specs must have the same length")
    if np.any(G <= 0):
        raise ValueError("all weights must be positive")
    s2 = np.array([sp.sigma_X2 for sp in specs])
    total = math.fsum(G)
    spread = math.fsum(G * G * np.expm1(4 * s2))
    sigma_z2 = 0.25 * math.log1p(spread / (total * total))
    mu_z = 0.5 * math.log(total) - sigma_z2
    return LognormalEquivalent(mu_z=mu_z, sigma_z2=sigma_z2)
