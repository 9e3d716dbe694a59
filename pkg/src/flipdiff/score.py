"""Exact discrete score and denoiser for enumerable data distributions.

Backward time t runs from 0 (pure noise) to t_f (data); the corresponding
forward/noise time is u = t_f - t. The score at a state x is the vector

    s^l(x) = 1 - mu_u(flip_l(x)) / mu_u(x),

the discrete analogue of the gradient of log mu, and the denoiser is the
posterior flip probability d^l(x) = P(X_0^l != x^l | X_u = x). The two are
related coordinatewise by the affine map implemented in
``score_from_denoiser``; samplers need only 1 - s^l >= 0.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidScoreError
from .forward import alpha, marginal, propagate_mass
from .states import Distribution, ProductBernoulli, as_bits, state_indices

# Forward-time floor: the coefficients 4a/(1-a^2) blow up as the forward time
# approaches 0 (a -> 1); clamping keeps losses and reparameterized scores
# finite. Training logs the fraction of clamped items.
T_MIN = 1e-4

RATE_TOL = 1e-9


def clamp_forward_time(u):
    """Apply the T_MIN floor to a forward (noise) time."""
    return np.maximum(u, T_MIN)


def _affine_coeffs(t, lam: float, t_f: float):
    """Coefficients (a_coef, b_coef) of s = a_coef - b_coef * d at backward time t."""
    u = clamp_forward_time(t_f - np.asarray(t, dtype=np.float64))
    a = alpha(u, lam)
    return 2.0 * a / (1.0 + a), 4.0 * a / (1.0 - a * a)


def score_target(t, x0_bits, xt_bits, lam: float, t_f: float):
    """Per-bit regression target whose conditional expectation is the score.

    Evaluates to a_coef where the clean and noised bits agree and
    a_coef - b_coef where they differ; elementwise over array inputs.
    """
    a_coef, b_coef = _affine_coeffs(t, lam, t_f)
    differ = np.not_equal(x0_bits, xt_bits)
    out = a_coef - b_coef * differ.astype(np.float64)
    return float(out) if np.ndim(out) == 0 else out


def score_from_denoiser(dvec, t, lam: float, t_f: float):
    """Map denoiser values in [0,1] to score components (1 - s stays >= 0)."""
    a_coef, b_coef = _affine_coeffs(t, lam, t_f)
    return a_coef - b_coef * np.asarray(dvec, dtype=np.float64)


def denoiser_from_score(svec, t, lam: float, t_f: float):
    """Inverse of ``score_from_denoiser``."""
    a_coef, b_coef = _affine_coeffs(t, lam, t_f)
    return (a_coef - np.asarray(svec, dtype=np.float64)) / b_coef


def exact_score(mu0: Distribution, t: float, x, lam: float, t_f: float) -> np.ndarray:
    """Score vector at backward time t from the exact forward marginal."""
    bits = as_bits(x)
    u = t_f - t
    if u < 0:
        raise ValueError("backward time exceeds the horizon t_f")
    mu_u = marginal(mu0, u, lam)
    if isinstance(mu_u, ProductBernoulli):
        p_here = np.where(bits == 1, mu_u.probs, 1.0 - mu_u.probs)
        p_flip = 1.0 - p_here
        return 1.0 - p_flip / p_here
    mass = mu_u.mass
    idx = int(state_indices(bits[None, :])[0])
    here = mass[idx]
    if here <= 0.0:
        raise ValueError(f"state {bits.tolist()} has zero mass at forward time {u!r}")
    flipped = mass[idx ^ (1 << np.arange(bits.size))]
    return 1.0 - flipped / here


def exact_denoiser(mu0: Distribution, t: float, x, lam: float, t_f: float) -> np.ndarray:
    """Posterior flip probabilities by brute-force Bayes over all clean states.

    Component l is sum_z 1{z_l != x_l} mu0(z) p_u(z, x) / mu_u(x) with
    u = t_f - t; requires d within the enumeration limit.
    """
    bits = as_bits(x)
    u = t_f - t
    if u < 0:
        raise ValueError("backward time exceeds the horizon t_f")
    table = mu0.to_table()
    idx = int(state_indices(bits[None, :])[0])
    denom = propagate_mass(table.mass, u, lam)[idx]
    if denom <= 0.0:
        raise ValueError(f"state {bits.tolist()} is unreachable at forward time {u!r}")
    numer = np.array([
        propagate_mass(table.mass, u, lam, flip_only_coord=coord)[idx]
        for coord in range(bits.size)
    ])
    return numer / denom


def backward_rates(svec, lam: float) -> tuple[float, np.ndarray | None]:
    """Total backward jump rate and coordinate flip weights for a score vector.

    Weights are None when the total rate vanishes; the caller must not jump.
    """
    rates = lam * (1.0 - np.asarray(svec, dtype=np.float64))
    if (rates < -lam * RATE_TOL).any():
        raise InvalidScoreError(f"negative backward rate from score {np.asarray(svec)!r}")
    rates = np.maximum(rates, 0.0)
    total = float(rates.sum())
    if total == 0.0:
        return 0.0, None
    return total, rates / total
