"""Tangent bounds on products and on the log-ratio rate term.

All functions broadcast over numpy arrays. References must be strictly
positive; values are not restricted.
"""

from __future__ import annotations

import numpy as np


class ReferenceError_(ValueError):
    """A bound was requested around a nonpositive reference point."""


def _check_refs(*refs):
    for r in refs:
        if np.any(np.asarray(r) <= 0):
            raise ReferenceError_("bound references must be strictly positive")


def bilinear_lower(x, y, x_ref, y_ref):
    """Concave minorant of ``x*y``, exact at the reference."""
    _check_refs(x_ref, y_ref)
    s = x_ref + y_ref
    return s * (x + y) - 0.5 * (s ** 2 + x ** 2 + y ** 2)


def bilinear_upper(x, y, x_ref, y_ref):
    """Convex majorant of ``x*y``, exact at the reference."""
    _check_refs(x_ref, y_ref)
    return 0.5 * (y_ref / x_ref) * x ** 2 + 0.5 * (x_ref / y_ref) * y ** 2


def triple_lower(t, x, y, t_ref, x_ref, y_ref):
    """Concave minorant of ``t*sqrt(x*y)``."""
    _check_refs(t_ref, x_ref, y_ref)
    sx, sy = np.sqrt(x_ref), np.sqrt(y_ref)
    w = sx + sy
    lin = bilinear_lower(t, np.sqrt(x), t_ref, sx) + bilinear_lower(t, np.sqrt(y), t_ref, sy)
    quad = w ** 2 * t + bilinear_upper(t, x, t_ref, x_ref) + bilinear_upper(t, y, t_ref, y_ref)
    return w * lin - 0.5 * quad


def triple_upper(t, x, y, t_ref, x_ref, y_ref):
    """Convex majorant of ``t*sqrt(x*y)``."""
    _check_refs(t_ref, x_ref, y_ref)
    return (0.5 * np.sqrt(y_ref / x_ref) * bilinear_upper(t, x, t_ref, x_ref)
            + 0.5 * np.sqrt(x_ref / y_ref) * bilinear_upper(t, y, t_ref, y_ref))


# Quadratic-form coefficients of the bounds above. Each bound is affine in the
# monomials (x, y, x^2, y^2) or, for the triple bounds, (t, sqrt x, sqrt y,
# t^2, x^2, y^2); the conic builder works with these coefficients directly.

def bilinear_lower_coeffs(x_ref, y_ref):
    """``(const, c_x, c_y, c_xx, c_yy)`` of :func:`bilinear_lower`."""
    s = x_ref + y_ref
    return -0.5 * s ** 2, s, s, -0.5, -0.5


def bilinear_upper_coeffs(x_ref, y_ref):
    """``(c_xx, c_yy)`` of :func:`bilinear_upper`."""
    return 0.5 * y_ref / x_ref, 0.5 * x_ref / y_ref


def triple_lower_coeffs(t_ref, x_ref, y_ref):
    """Coefficients on ``(1, t, sqrt x, sqrt y, x, y, t^2, x^2, y^2)`` of :func:`triple_lower`."""
    sx, sy = np.sqrt(x_ref), np.sqrt(y_ref)
    w = sx + sy
    ax, ay = t_ref + sx, t_ref + sy
    ux_t, ux_x = bilinear_upper_coeffs(t_ref, x_ref)
    uy_t, uy_y = bilinear_upper_coeffs(t_ref, y_ref)
    return {
        "1": -0.5 * w * (ax ** 2 + ay ** 2),
        "t": w * (ax + ay) - 0.5 * w ** 2,
        "sx": w * ax,
        "sy": w * ay,
        "x": -0.5 * w,
        "y": -0.5 * w,
        "tt": -w - 0.5 * (ux_t + uy_t),
        "xx": -0.5 * ux_x,
        "yy": -0.5 * uy_y,
    }


def triple_upper_coeffs(t_ref, x_ref, y_ref):
    """Coefficients on ``(t^2, x^2, y^2)`` of :func:`triple_upper`."""
    ux_t, ux_x = bilinear_upper_coeffs(t_ref, x_ref)
    uy_t, uy_y = bilinear_upper_coeffs(t_ref, y_ref)
    wx, wy = 0.5 * np.sqrt(y_ref / x_ref), 0.5 * np.sqrt(x_ref / y_ref)
    return {"tt": wx * ux_t + wy * uy_t, "xx": wx * ux_x, "yy": wy * uy_y}


# ---------------------------------------------------------------- rate bounds


def _check_nd(num, den):
    if np.any(np.asarray(num) <= 0) or np.any(np.asarray(den) <= 0):
        raise ReferenceError_("rate expansion needs positive numerator and denominator")


def rate_lb_coeffs(num, den):
    """``(A, B, C)`` with ``ln(1 + N/D) >= A - B/N - C*D``, tight at ``(num, den)``."""
    _check_nd(num, den)
    s = num + den
    return np.log1p(num / den) + 2.0 * num / s, num ** 2 / s, num / (s * den)


def rate_ub_coeffs(num, den):
    """``(A_hat, B_hat, C_hat)`` with
    ``ln(1 + N/D) <= A_hat + 0.5*B_hat*(C_hat*N^2/D + 1/(C_hat*D))``."""
    _check_nd(num, den)
    s = num + den
    return np.log1p(num / den) - num / s, den / s, 1.0 / num


def rate_lower(num, den, coeffs):
    a, b, c = coeffs
    return a - b / num - c * den


def rate_upper(num, den, coeffs):
    a, b, c = coeffs
    return a + 0.5 * b * (c * num ** 2 / den + 1.0 / (c * den))


def soc_holds(x, y, z):
    """Rotated-cone test ``||[2x; y - z]|| <= y + z``."""
    return np.hypot(2.0 * x, y - z) <= y + z
