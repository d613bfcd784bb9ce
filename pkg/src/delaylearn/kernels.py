"""Surrogate spike derivative and the Gaussian spike-train kernel."""

from __future__ import annotations

import math

import numpy as np

from .config import ConfigError

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def surrogate_pd(v, v_th: float, gamma_pd: float):
    """Piecewise-linear pseudo-derivative ``dz/dv``.

    ``(gamma_pd / v_th) * max(0, 1 - |(v - v_th) / v_th|)``: a triangle of
    height ``gamma_pd / v_th`` centred on the threshold, zero outside
    ``(0, 2 v_th)``.
    """
    v = np.asarray(v, dtype=float)
    return (gamma_pd / v_th) * np.maximum(0.0, 1.0 - np.abs((v - v_th) / v_th))


def surrogate_primitive(v, v_th: float, gamma_pd: float):
    """Antiderivative of :func:`surrogate_pd`, rising from 0 to ``gamma_pd``.

    Used by the finite-difference oracle to build a spike function whose slope
    is exactly the surrogate.
    """
    u = np.clip((np.asarray(v, dtype=float) - v_th) / v_th, -1.0, 1.0)
    lower = 0.5 * (1.0 + u) ** 2
    upper = 1.0 - 0.5 * (1.0 - u) ** 2
    return gamma_pd * np.where(u <= 0.0, lower, upper)


def _check_sigma(sigma: float) -> None:
    if not sigma > 0:
        raise ConfigError(f"sigma must be > 0, got {sigma}")


def gauss_kernel(t, t_k, d, sigma: float):
    """Gaussian stand-in for a spike at ``t_k`` shifted by ``d`` steps, evaluated at ``t``."""
    _check_sigma(sigma)
    off = np.asarray(t, dtype=float) - t_k - d
    return np.exp(-off**2 / (2.0 * sigma**2)) / (_SQRT_2PI * sigma)


def gauss_kernel_ddelay(t, t_k, d, sigma: float):
    """Derivative of :func:`gauss_kernel` with respect to the shift ``d``.

    Positive after the kernel centre: delaying a spike raises its
    contribution at later times.
    """
    _check_sigma(sigma)
    off = np.asarray(t, dtype=float) - t_k - d
    return off / (_SQRT_2PI * sigma**3) * np.exp(-off**2 / (2.0 * sigma**2))


def kernel_taps(frac: np.ndarray, radius: int, sigma: float, derivative: bool = False) -> np.ndarray:
    """Kernel values at integer tap offsets ``u = -radius..radius``.

    For a synapse whose continuous shift is ``eff + frac`` the spike read at
    lag ``eff + u`` is weighted by ``G(u - frac)``.  Returns ``frac.shape + (2R+1,)``.
    """
    u = np.arange(-radius, radius + 1, dtype=float)
    fn = gauss_kernel_ddelay if derivative else gauss_kernel
    return fn(u, 0.0, np.asarray(frac, dtype=float)[..., None], sigma)
