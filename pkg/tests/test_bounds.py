import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isac_ee import bounds as B

pos = st.floats(1e-3, 1e3)


def test_bilinear_lower_examples():
    assert B.bilinear_lower(2.0, 2.0, 2.0, 2.0) == pytest.approx(4.0)
    assert B.bilinear_lower(1.0, 4.0, 2.0, 2.0) == pytest.approx(3.5)


def test_bilinear_upper_examples():
    assert B.bilinear_upper(3.0, 3.0, 3.0, 3.0) == pytest.approx(9.0)
    assert B.bilinear_upper(1.0, 4.0, 2.0, 2.0) == pytest.approx(8.5)


def test_bilinear_gradients_at_reference():
    xr, yr, h = 1.3, 0.4, 1e-6
    for f in (B.bilinear_lower, B.bilinear_upper):
        gx = (f(xr + h, yr, xr, yr) - f(xr - h, yr, xr, yr)) / (2 * h)
        gy = (f(xr, yr + h, xr, yr) - f(xr, yr - h, xr, yr)) / (2 * h)
        assert gx == pytest.approx(yr, rel=1e-6) and gy == pytest.approx(xr, rel=1e-6)


def test_triple_tangency_and_symmetry():
    t, x, y = 0.7, 2.0, 5.0
    exact = t * np.sqrt(x * y)
    assert B.triple_lower(t, x, y, t, x, y) == pytest.approx(exact)
    assert B.triple_upper(t, x, y, t, x, y) == pytest.approx(exact)
    got = B.triple_upper(0.3, 1.0, 4.0, t, 2.0, 2.0)
    ref = 0.5 * B.bilinear_upper(0.3, 1.0, t, 2.0) + 0.5 * B.bilinear_upper(0.3, 4.0, t, 2.0)
    assert got == pytest.approx(ref)


def test_rate_coefficients():
    a, b, c = B.rate_lb_coeffs(2.0, 2.0)
    assert (a, b, c) == pytest.approx((np.log(2) + 1, 1.0, 0.25))
    a, b, c = B.rate_lb_coeffs(3.0, 1.0)
    assert (a, b, c) == pytest.approx((np.log(4) + 1.5, 2.25, 0.75))
    a, b, c = B.rate_lb_coeffs(1e-9, 1.0)
    assert max(abs(a), abs(b), abs(c)) < 1e-8
    a, b, c = B.rate_ub_coeffs(2.0, 2.0)
    assert (a, b, c) == pytest.approx((np.log(2) - 0.5, 0.5, 0.5))
    a, b, c = B.rate_ub_coeffs(3.0, 1.0)
    assert (a, b, c) == pytest.approx((np.log(4) - 0.75, 0.25, 1 / 3))


def test_reference_must_be_positive():
    with pytest.raises(B.ReferenceError_):
        B.bilinear_lower(1.0, 1.0, 0.0, 1.0)
    with pytest.raises(B.ReferenceError_):
        B.rate_lb_coeffs(-1.0, 1.0)


def test_coefficient_forms_agree():
    rng = np.random.default_rng(0)
    xr, yr, tr = rng.uniform(0.1, 3, 3)
    x, y, t = rng.uniform(0.1, 3, 3)
    c0, cx, cy, cxx, cyy = B.bilinear_lower_coeffs(xr, yr)
    assert c0 + cx * x + cy * y + cxx * x * x + cyy * y * y == pytest.approx(B.bilinear_lower(x, y, xr, yr))
    uxx, uyy = B.bilinear_upper_coeffs(xr, yr)
    assert uxx * x * x + uyy * y * y == pytest.approx(B.bilinear_upper(x, y, xr, yr))
    c = B.triple_lower_coeffs(tr, xr, yr)
    mono = {"1": 1.0, "t": t, "sx": np.sqrt(x), "sy": np.sqrt(y), "x": x, "y": y,
            "tt": t * t, "xx": x * x, "yy": y * y}
    assert sum(c[k] * mono[k] for k in c) == pytest.approx(B.triple_lower(t, x, y, tr, xr, yr))
    c = B.triple_upper_coeffs(tr, xr, yr)
    assert c["tt"] * t * t + c["xx"] * x * x + c["yy"] * y * y == pytest.approx(
        B.triple_upper(t, x, y, tr, xr, yr))


@settings(max_examples=300, deadline=None)
@given(x=pos, y=pos, xr=pos, yr=pos)
def test_bilinear_sandwich(x, y, xr, yr):
    xy = x * y
    tol = 1e-12 * max(1.0, xy, (xr + yr) ** 2, x * x + y * y)
    assert B.bilinear_lower(x, y, xr, yr) <= xy + tol
    up_scale = max(1.0, xy, yr / xr * x * x, xr / yr * y * y)
    assert B.bilinear_upper(x, y, xr, yr) >= xy - 1e-12 * up_scale


@settings(max_examples=300, deadline=None)
@given(t=pos, x=pos, y=pos, tr=pos, xr=pos, yr=pos)
def test_triple_sandwich(t, x, y, tr, xr, yr):
    v = t * np.sqrt(x * y)
    lo = B.triple_lower(t, x, y, tr, xr, yr)
    hi = B.triple_upper(t, x, y, tr, xr, yr)
    scale = max(1.0, abs(lo), abs(hi), v)
    assert lo <= v + 1e-12 * scale and v <= hi + 1e-12 * scale


@settings(max_examples=300, deadline=None)
@given(n=pos, d=pos, nr=pos, dr=pos)
def test_rate_sandwich(n, d, nr, dr):
    v = np.log1p(n / d)
    lo = B.rate_lower(n, d, B.rate_lb_coeffs(nr, dr))
    hi = B.rate_upper(n, d, B.rate_ub_coeffs(nr, dr))
    scale = max(1.0, abs(lo), abs(hi))
    assert lo <= v + 1e-12 * scale and v <= hi + 1e-12 * scale
