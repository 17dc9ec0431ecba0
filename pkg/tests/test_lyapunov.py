from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ergodyn.core import ball_volume, rng_for
from ergodyn.lyapunov import (
    LyapunovSpectrum,
    TangentBall,
    chi_plus,
    decay_rate,
    diagonal_ball_volume,
    linearized_ball_volume,
    oseledec_angle,
    polygon_area,
    qr_spectrum,
    sandwich_constants,
    tangent_ball,
    tangent_ball_volume,
)
from ergodyn.models import CHI_PLUS, get_system
from ergodyn.models import modular as M

CAT = float(np.log((3 + np.sqrt(5)) / 2))


def _liouville_point(seed=3, y_max=2.0):
    pts = M.liouville_sample_array(50, rng_for(seed))
    return pts[np.flatnonzero(M.basepoint(pts).imag < y_max)[0]]


# ------------------------------------------------------------------ spectra


def test_identity_spectrum_is_zero():
    spec = qr_spectrum(get_system("identity"), np.array([0.3]), 200)
    assert spec.exponents == [(0.0, 1)]
    assert chi_plus(spec) == 0.0


def test_cat_spectrum():
    spec = qr_spectrum(get_system("cat"), np.array([0.1, 0.2]), 10_000, seed=7)
    assert [d for _, d in spec.exponents] == [1, 1]
    assert spec.exponents[0][0] == pytest.approx(CAT, abs=1e-3)
    assert spec.exponents[1][0] == pytest.approx(-CAT, abs=1e-3)
    assert chi_plus(spec) == pytest.approx(0.962424, abs=1e-3)


def test_cat_spectrum_from_random_frame():
    spec = qr_spectrum(get_system("cat"), np.array([0.1, 0.2]), 10_000, seed=7, random_frame=True)
    assert spec.exponents[0][0] == pytest.approx(CAT, abs=1e-3)


def test_modular_spectrum_is_exact():
    spec = qr_spectrum(get_system("modular-geodesic"), _liouville_point(), 200)
    assert np.allclose([lam for lam, _ in spec.exponents], [1, 0, -1], atol=1e-6)
    assert chi_plus(spec) == pytest.approx(1.0, abs=1e-6)


def test_spectrum_invariants_volume_preserving():
    for sid, x in (("cat", np.array([0.3, 0.7])), ("modular-geodesic", _liouville_point())):
        spec = qr_spectrum(get_system(sid), x, 500)
        assert sum(d for _, d in spec.exponents) == get_system(sid).dim
        lams = [lam for lam, _ in spec.exponents]
        assert all(a > b for a, b in zip(lams, lams[1:]))
        assert abs(sum(lam * d for lam, d in spec.exponents)) < 1e-6


def test_spectrum_preconditions_and_singular_jacobian():
    with pytest.raises(ValueError):
        qr_spectrum(get_system("cat"), np.array([0.1, 0.2]), 50)
    flat = dataclasses.replace(get_system("doubling"), jacobian=lambda x: np.zeros((1, 1)))
    with pytest.raises(Exception, match="0"):
        qr_spectrum(flat, np.array([0.1]), 100)


def test_chi_plus_of_nonpositive_spectrum_is_zero():
    assert chi_plus(LyapunovSpectrum([(0.0, 1), (-0.5, 2)], 100, 0.0)) == 0.0
    assert chi_plus(LyapunovSpectrum([(0.7, 2), (-1.4, 1)], 100, 0.0)) == pytest.approx(1.4)


# ---------------------------------------------------------- tangent volumes


def test_n1_tangent_ball_is_disk():
    ball = TangentBall([np.eye(2) * 3.0], 0.1)
    assert tangent_ball_volume(ball, "exact-oracle").mean == pytest.approx(np.pi * 0.01, rel=1e-3)
    mc = tangent_ball_volume(ball, "monte-carlo", 20_000)
    assert abs(mc.mean - np.pi * 0.01) <= 4 * mc.std_err


@pytest.mark.parametrize("n", [3, 6, 10])
def test_diagonal_strip_volume(n):
    r = 0.1
    ball = TangentBall([np.diag([2.0, 0.5])] * n, r)
    strip = 2 * (r * 2.0 ** -(n - 1)) * 2 * r
    assert tangent_ball_volume(ball, "exact-oracle").mean == pytest.approx(strip, rel=4.0 ** -(n - 1) + 2e-3)
    assert diagonal_ball_volume([np.log(2), -np.log(2)], n, r) == pytest.approx(strip, rel=4.0 ** -(n - 1))


def test_cat_monte_carlo_agrees_with_polygon_oracle():
    ball = tangent_ball(get_system("cat"), np.array([0.1, 0.2]), 10, 0.1)
    exact = tangent_ball_volume(ball, "exact-oracle").mean
    mc = tangent_ball_volume(ball, "monte-carlo", 200_000, seed=1)
    assert abs(mc.mean - exact) <= 3 * mc.std_err + 1e-3 * exact


def test_polygon_oracle_matches_diagonal_oracle_for_cat():
    # the cat cocycle is symmetric with orthogonal eigenvectors, so its ball is a rotated diagonal one
    ball = tangent_ball(get_system("cat"), np.array([0.1, 0.2]), 10, 0.1)
    assert polygon_area(ball) == pytest.approx(diagonal_ball_volume([CAT, -CAT], 10, 0.1), rel=1e-3)


@pytest.mark.parametrize("n", [1, 3, 6, 12])
def test_three_dim_monte_carlo_matches_diagonal_oracle(n):
    rates = [1.0, 0.0, -1.0]
    ball = TangentBall([M.COCYCLE] * n, 0.1)
    mc = tangent_ball_volume(ball, "monte-carlo", 200_000, seed=n)
    exact = diagonal_ball_volume(rates, n, 0.1)
    assert abs(mc.mean - exact) <= 3 * mc.std_err + 1e-9 * exact


def test_exact_oracle_preconditions():
    with pytest.raises(ValueError):
        tangent_ball_volume(TangentBall([np.eye(3)], 0.1), "exact-oracle")
    with pytest.raises(ValueError):
        tangent_ball_volume(TangentBall([np.eye(2)] * 13, 0.1), "exact-oracle")
    with pytest.raises(ValueError):
        TangentBall([np.eye(2)], 0.0)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 8), st.floats(0.02, 0.2))
def test_tangent_volume_monotone_in_n_and_r(n, r):
    cat = get_system("cat")
    x = np.array([0.37, 0.11])
    v = lambda n_, r_: tangent_ball_volume(tangent_ball(cat, x, n_, r_), "exact-oracle").mean
    assert v(n + 1, r) <= v(n, r) * (1 + 2e-3)
    assert v(n, r) <= v(n, 1.1 * r) * (1 + 2e-3)


# ------------------------------------------------------------- decay rates


def test_identity_decay_is_zero():
    rep = decay_rate(get_system("identity"), np.array([0.4]), 0.1, [1, 2, 4, 8], 5000)
    assert np.allclose(rep.rates, 0.0) and rep.slope == pytest.approx(0.0, abs=1e-12)
    assert rep.chi_plus == 0.0


@pytest.mark.parametrize("sid, x, n_max", [
    ("doubling", np.array([0.3]), 12),
    ("cat", np.array([0.1, 0.2]), 14),
])
def test_decay_slope_matches_chi_plus_flat(sid, x, n_max):
    rep = decay_rate(get_system(sid), x, 0.1, list(range(1, n_max + 1)), 100_000, seed=0, chi=CHI_PLUS[sid])
    assert rep.gap <= 0.05 * CHI_PLUS[sid]


def test_decay_slope_matches_chi_plus_modular():
    rep = decay_rate(get_system("modular-geodesic"), _liouville_point(), 0.1, list(range(1, 13)), 100_000,
                     seed=0, chi=1.0)
    assert rep.gap <= 0.05


def test_decay_rate_requires_ascending_n():
    with pytest.raises(ValueError):
        decay_rate(get_system("cat"), np.array([0.1, 0.2]), 0.1, [3, 1])


def test_sandwich_constants_bracket_volumes():
    cat = get_system("cat")
    n_list = list(range(1, 11))
    vols = [tangent_ball_volume(tangent_ball(cat, np.array([0.1, 0.2]), n, 0.1), "exact-oracle").mean
            for n in n_list]
    lo, hi = sandwich_constants(vols, n_list, CAT, 2, 0.1)
    n = np.array(n_list)
    assert np.all(lo * np.exp(-n * (CAT + 0.2)) <= np.array(vols) * (1 + 1e-12))
    assert np.all(np.array(vols) <= hi * np.exp(-n * (CAT - 0.2)) * (1 + 1e-12))
    assert lo > 0 and hi > 0


# ------------------------------------------------------ linearized volumes


def test_identity_linearized_volume_is_metric_ball():
    ident = get_system("identity")
    v = linearized_ball_volume(ident, np.array([0.4]), 5, 0.1, 10_000)
    assert v.mean == pytest.approx(ident.ref_volume_of_ball(np.array([0.4]), 0.1))


@pytest.mark.parametrize("n", [1, 4, 8])
def test_doubling_linearized_equals_dynamical_ball(n):
    d = get_system("doubling")
    lin = linearized_ball_volume(d, np.array([0.3]), n, 0.1, 20_000)
    dyn = ball_volume(d, np.array([0.3]), n, 0.1, 200_000, 0)
    assert lin.mean == pytest.approx(0.1 * 2.0 ** (2 - n), rel=1e-9)
    assert abs(lin.mean - dyn.mean) <= 4 * dyn.std_err + 1e-12


def test_cat_linearized_vs_dynamical_ratio():
    cat = get_system("cat")
    x = np.array([0.21, 0.43])
    for n in (2, 6, 10):
        lin = linearized_ball_volume(cat, x, n, 0.05, 50_000)
        dyn = ball_volume(cat, x, n, 0.05, 50_000, 0) if n <= 2 else None
        if dyn is not None:
            assert 0.5 <= lin.mean / dyn.mean <= 2.0
        exact = tangent_ball_volume(tangent_ball(cat, x, n, 0.05), "exact-oracle").mean
        assert 0.5 <= lin.mean / exact <= 2.0


def test_oseledec_angle_of_cat_is_right_angle():
    # the cat matrix is symmetric: unstable and stable eigenvectors are orthogonal
    assert oseledec_angle(get_system("cat"), np.array([0.1, 0.2]), 10) == pytest.approx(np.pi / 2, abs=1e-6)
