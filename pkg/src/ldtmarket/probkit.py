"""Scalar and vectorised kernels for the standard and truncated normal.

Every function accepts numpy arrays as well as Python floats. Scalars in
give floats out, so callers in the optimisation loops do not pay for
array boxing.

Tail ratios are built on the scaled complementary error function
``erfcx`` so that hazard terms stay finite far into the tails, where a
naive ``pdf / (1 - cdf)`` would turn into ``0 / 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import special

__all__ = [
    "GaussianSpec",
    "normal_pdf",
    "normal_cdf",
    "normal_quantile",
    "inverse_mills_below",
    "hazard_above",
    "expected_overload",
    "expected_overload_grad",
    "truncated_moments",
    "rate_function",
]

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_SQRT_HALF = math.sqrt(0.5)


@dataclass(frozen=True)
class GaussianSpec:
    """A univariate normal distribution N(mean, std**2), std in MW."""

    mean: float
    std: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.mean) and math.isfinite(self.std)):
            raise ValueError(f"GaussianSpec fields must be finite, got {self}")
        if self.std <= 0.0:
            raise ValueError(f"GaussianSpec.std must be > 0, got {self.std}")


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def normal_pdf(z):
    """Standard normal density."""
    z = np.asarray(z, dtype=float)
    return _out(_INV_SQRT_2PI * np.exp(-0.5 * z * z))


def normal_cdf(z):
    """Standard normal CDF (Cephes ``ndtr``, erfc-based in the tails)."""
    return _out(special.ndtr(np.asarray(z, dtype=float)))


def normal_quantile(p):
    """Inverse standard normal CDF.

    Raises ``ValueError`` when any ``p`` lies outside the open unit interval.
    One Newton step on the CDF polishes the Cephes result.
    """
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0.0) & (p < 1.0))):
        raise ValueError("normal_quantile requires 0 < p < 1")
    z = special.ndtri(p)
    z = z - (special.ndtr(z) - p) / (_INV_SQRT_2PI * np.exp(-0.5 * z * z))
    return _out(z)


def inverse_mills_below(z):
    """pdf(z) / cdf(z), finite for all real z."""
    z = np.asarray(z, dtype=float)
    return _out(_SQRT_2_OVER_PI / special.erfcx(-z * _SQRT_HALF))


def hazard_above(z):
    """pdf(z) / (1 - cdf(z)), finite for all real z."""
    z = np.asarray(z, dtype=float)
    return _out(_SQRT_2_OVER_PI / special.erfcx(z * _SQRT_HALF))


def expected_overload(mu_t, sigma_t):
    """E[max(Y, 0)] for Y ~ N(mu_t, sigma_t**2).

    Closed form ``mu * cdf(mu/sigma) + sigma * pdf(mu/sigma)``; for
    ``sigma_t == 0`` the distribution is a point mass and the result is
    ``max(mu_t, 0)``.

    For negative ``mu/sigma`` the two terms nearly cancel. That branch is
    rewritten as ``sigma * pdf(z) * (1 + z * cdf(z)/pdf(z))``, with the
    Mills ratio taken from ``erfcx``, so the absolute error stays at
    round-off level.
    """
    if np.ndim(mu_t) == 0 and np.ndim(sigma_t) == 0:
        return _overload_scalar(float(mu_t), float(sigma_t))
    mu_b, sigma_b = np.broadcast_arrays(np.asarray(mu_t, dtype=float), np.asarray(sigma_t, dtype=float))
    if np.any(sigma_b < 0.0):
        raise ValueError("expected_overload requires sigma_t >= 0")
    out = np.maximum(mu_b, 0.0)
    pos = sigma_b > 0.0
    if np.any(pos):
        m = mu_b[pos]
        s = sigma_b[pos]
        with np.errstate(over="ignore", invalid="ignore"):
            z = m / s
            pdf = _INV_SQRT_2PI * np.exp(-0.5 * z * z)
            upper = m * special.ndtr(z) + s * pdf
            mills = np.sqrt(np.pi / 2.0) * special.erfcx(-z * _SQRT_HALF)
            lower = s * pdf * (1.0 + z * mills)
        val = np.where(z >= 0.0, upper, np.maximum(lower, 0.0))
        # A spread so small that mu/sigma overflows is a point mass.
        out[pos] = np.where(np.isfinite(z), val, np.maximum(m, 0.0))
    return out


def _overload_scalar(mu: float, sigma: float) -> float:
    if sigma < 0.0:
        raise ValueError("expected_overload requires sigma_t >= 0")
    if sigma == 0.0:
        return max(mu, 0.0)
    z = mu / sigma
    if math.isinf(z):
        return max(mu, 0.0)
    pdf = _INV_SQRT_2PI * math.exp(-0.5 * z * z)
    if z >= 0.0:
        return mu * float(special.ndtr(z)) + sigma * pdf
    mills = math.sqrt(math.pi / 2.0) * float(special.erfcx(-z * _SQRT_HALF))
    return max(sigma * pdf * (1.0 + z * mills), 0.0)


def expected_overload_grad(mu_t, sigma_t):
    """Partial derivatives of :func:`expected_overload` in (mu_t, sigma_t).

    They are ``cdf(mu/sigma)`` and ``pdf(mu/sigma)``. At ``sigma_t == 0``
    the mean derivative is the step ``1[mu > 0]`` and the sigma derivative
    is zero; both are valid subgradients.
    """
    if np.ndim(mu_t) == 0 and np.ndim(sigma_t) == 0:
        mu, sigma = float(mu_t), float(sigma_t)
        if sigma <= 0.0:
            return (1.0 if mu > 0.0 else 0.0), 0.0
        z = mu / sigma
        return float(special.ndtr(z)), _INV_SQRT_2PI * math.exp(-0.5 * z * z)
    mu_b, sigma_b = np.broadcast_arrays(np.asarray(mu_t, dtype=float), np.asarray(sigma_t, dtype=float))
    d_mu = (mu_b > 0.0).astype(float)
    d_sigma = np.zeros_like(d_mu)
    pos = sigma_b > 0.0
    if np.any(pos):
        z = mu_b[pos] / sigma_b[pos]
        d_mu[pos] = special.ndtr(z)
        d_sigma[pos] = _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    return d_mu, d_sigma


def truncated_moments(
    spec: GaussianSpec, cut: float, side: Literal["below", "above"]
) -> tuple[float, float]:
    """Conditional mean and variance of ``spec`` restricted to one side of ``cut``.

    ``below`` conditions on ``X <= cut``, ``above`` on ``X > cut``. An
    infinite cut on the open side returns the untruncated moments.
    """
    if side not in ("below", "above"):
        raise ValueError(f"side must be 'below' or 'above', got {side!r}")
    m, s = spec.mean, spec.std
    if math.isinf(cut):
        if (side == "below") == (cut > 0):
            return m, s * s
        raise ValueError(f"truncation at {cut} on side {side!r} has zero mass")
    z = (cut - m) / s
    if side == "below":
        lam = inverse_mills_below(z)
        return m - s * lam, s * s * max(1.0 - z * lam - lam * lam, 0.0)
    h = hazard_above(z)
    return m + s * h, s * s * max(1.0 + z * h - h * h, 0.0)


def rate_function(spec: GaussianSpec, omega):
    """Gaussian large-deviation rate 0.5 * ((omega - mean) / std)**2."""
    x = (np.asarray(omega, dtype=float) - spec.mean) / spec.std
    return _out(0.5 * x * x)
