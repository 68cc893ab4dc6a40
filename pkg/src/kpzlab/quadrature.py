"""Adaptive quadrature with mandatory error reporting.

Thin wrapper around QUADPACK's Gauss-Kronrod integrator: non-convergence is
an exception carrying the residual estimate, never a silent return.  Fixed
logarithmic grids used by the tensorized third-order integrals live here too.
"""

import warnings

import numpy as np
from scipy.integrate import IntegrationWarning, quad

DEFAULT_RTOL = 1e-9
DEFAULT_LIMIT = 200


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to converge; carries the residual estimate."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


def adaptive_quad(f, a, b, rtol=DEFAULT_RTOL, atol=1e-14, limit=DEFAULT_LIMIT,
                  points=None):
    """Integrate f over [a, b]; return (value, error_estimate).

    Raises QuadratureError when QUADPACK reports non-convergence or the
    returned error estimate exceeds the requested tolerance by more than a
    factor 10 (slack for roundoff-limited integrands).
    """
    if b <= a:
        return 0.0, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            val, err = quad(f, a, b, epsabs=atol, epsrel=rtol, limit=limit,
                            points=points)
        except IntegrationWarning as exc:
            val, err = quad(f, a, b, epsabs=atol, epsrel=rtol, limit=limit,
                            points=points)
            raise QuadratureError(
                f"quadrature on [{a}, {b}] did not converge: {exc}",
                residual=err) from exc
    tol = max(atol, rtol * abs(val))
    if err > 10.0 * tol and err > 1e-10:
        raise QuadratureError(
            f"quadrature on [{a}, {b}] error estimate {err:.3e} exceeds "
            f"tolerance {tol:.3e}", residual=err)
    return val, err


def adaptive_quad_pieces(f, breakpoints, rtol=DEFAULT_RTOL, atol=1e-14,
                         limit=DEFAULT_LIMIT):
    """Integrate f piecewise over consecutive breakpoints; sums values/errors."""
    total, errtot = 0.0, 0.0
    for a, b in zip(breakpoints[:-1], breakpoints[1:]):
        v, e = adaptive_quad(f, a, b, rtol=rtol, atol=atol, limit=limit)
        total += v
        errtot += e
    return total, errtot


def log_grid(lo, hi, points_per_decade=40, minimum=24):
    """Logarithmically spaced grid on [lo, hi] with trapezoid weights."""
    if lo <= 0 or hi <= lo:
        raise ValueError("log_grid needs 0 < lo < hi")
    decades = np.log10(hi / lo)
    n = max(minimum, int(np.ceil(decades * points_per_decade)) + 1)
    g = np.exp(np.linspace(np.log(lo), np.log(hi), n))
    w = np.empty_like(g)
    w[1:-1] = 0.5 * (g[2:] - g[:-2])
    w[0] = 0.5 * (g[1] - g[0])
    w[-1] = 0.5 * (g[-1] - g[-2])
    return g, w


def trapezoid_weights(x):
    """Trapezoid weights for an arbitrary sorted 1-D grid."""
    w = np.empty_like(x)
    w[1:-1] = 0.5 * (x[2:] - x[:-2])
    w[0] = 0.5 * (x[1] - x[0])
    w[-1] = 0.5 * (x[-1] - x[-2])
    return w
