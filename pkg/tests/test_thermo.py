from __future__ import annotations

import csv
import io
import json

import numpy as np
import pytest

from ergodyn.core import rng_for
from ergodyn.entropy import UnresolvedEstimate, returning_times
from ergodyn.models import CompactWindow, base_points, get_system
from ergodyn.models import modular as M
from ergodyn.thermo import (
    birkhoff_average,
    birkhoff_sum,
    csv_text,
    geometric_potential,
    gibbs_base_points,
    gibbs_check,
    indicator_potential,
    pesin_check,
    ruelle_report,
)

MOD = get_system("modular-geodesic")

SMALL = {"doubling": {"cloud": 20_000, "r_list": [0.1, 0.05], "n_list": list(range(1, 9)), "panel": 6,
                      "riem_r_list": [0.05], "riem_n_list": list(range(1, 9)), "n_samples": 100_000,
                      "riem_panel": 2}}


def _liouville_points(k, r=0.3, y=2.5, seed=0):
    cloud = M.liouville_sample_array(2000, rng_for(seed))
    return base_points(MOD, cloud, k, r, CompactWindow(y))


# ---------------------------------------------------------------- Birkhoff


def test_empty_birkhoff_sum_is_zero():
    for sid in ("identity", "doubling", "cat", "modular-geodesic"):
        x = np.eye(2) if sid == "modular-geodesic" else np.full(get_system(sid).dim, 0.3)
        assert birkhoff_sum(get_system(sid), x, 0) == 0.0


def test_geometric_potential_averages():
    v = _liouville_points(1)[0]
    assert birkhoff_average(MOD, v, 1) == -1.0
    for T in (1, 7, 50):
        assert birkhoff_average(MOD, v, T) == -1.0
    cat = get_system("cat")
    assert birkhoff_average(cat, np.array([0.1, 0.2]), 20) == pytest.approx(-0.962424, abs=1e-6)
    with pytest.raises(ValueError):
        birkhoff_average(MOD, v, 0)


def test_window_indicator_average_matches_window_mass():
    v = _liouville_points(1, seed=4)[0]
    avg = birkhoff_average(MOD, v, 10_000, indicator_potential(MOD, 8.0))
    assert avg == pytest.approx(CompactWindow(8.0).liouville_mass(), rel=0.02)


def test_potential_is_constant_per_system():
    pts = M.liouville_sample_array(5, rng_for(0))
    assert np.all(geometric_potential(MOD)(pts) == -1.0)
    assert np.all(geometric_potential(get_system("identity"))(np.zeros((3, 1))) == 0.0)


# ------------------------------------------------------------------- Gibbs


def test_gibbs_t0_row_is_metric_ball_volume():
    v = _liouville_points(1)[0]
    g = gibbs_check(MOD, v, 0.3, [0], n_samples=40_000, window=CompactWindow(2.5))
    T, log_mass, s, ratio = g.rows[0]
    expect = np.log(MOD.ref_volume_of_ball(v, 0.3) / MOD.total_volume)
    assert T == 0 and s == 0.0 and ratio == log_mass
    assert log_mass == pytest.approx(expect, abs=0.03)


def test_gibbs_volume_mode_slope_and_spread():
    v = _liouville_points(1, seed=2)[0]
    g = gibbs_check(MOD, v, 0.3, list(range(0, 9)), n_samples=40_000, window=CompactWindow(2.5))
    assert -1.2 <= g.slope <= -0.85
    assert g.ratio_spread <= 1.5 and g.passed
    assert all(T in set(range(0, 9)) - set(g.diagnostics["skipped_not_returning"]) for T, *_ in g.rows)


def test_gibbs_measure_mode_agrees_with_volume_mode():
    v = _liouville_points(1, seed=2)[0]
    cloud = M.liouville_sample_array(300_000, rng_for(9))
    gm = gibbs_check(MOD, v, 0.3, [0, 1, 2], mode="measure", cloud=cloud)
    gv = gibbs_check(MOD, v, 0.3, [0, 1, 2], n_samples=40_000)
    for a, b in zip(gm.rows, gv.rows):
        assert a[1] == pytest.approx(b[1], abs=0.15)


def test_gibbs_radius_change_is_a_uniform_shift():
    v = _liouville_points(1, r=0.4, y=1.5, seed=5)[0]
    Ts = list(range(0, 7))
    a = gibbs_check(MOD, v, 0.2, Ts, n_samples=40_000, window=CompactWindow(1.5))
    b = gibbs_check(MOD, v, 0.4, Ts, n_samples=40_000, window=CompactWindow(1.5))
    ra, rb = dict((r[0], r[3]) for r in a.rows), dict((r[0], r[3]) for r in b.rows)
    shift = [rb[T] - ra[T] for T in ra if T in rb]
    assert len(shift) >= 3 and max(shift) - min(shift) <= 1.5


def test_gibbs_base_points_return_often_enough():
    cloud = M.liouville_sample_array(5000, rng_for(0, 1))
    w = CompactWindow(2.5)
    pts = gibbs_base_points(MOD, cloud, 6, 0.3, w, 10)
    assert len(pts) == 6
    assert all(len(returning_times(MOD, v, w, 10)) >= 5 for v in pts)
    assert all(M.basepoint(v).imag <= 2.5 for v in pts)


def test_gibbs_preconditions():
    v = _liouville_points(1)[0]
    with pytest.raises(ValueError):
        gibbs_check(MOD, v, 0.3, [3, 1])
    with pytest.raises(ValueError):
        gibbs_check(MOD, v, 0.3, [1], mode="measure")
    high = M.reduce(M.matrix_from_basepoint(5j, 0.3)).m
    with pytest.raises(ValueError):
        gibbs_check(MOD, high, 0.3, [1], window=CompactWindow(2.0))
    with pytest.raises(UnresolvedEstimate):
        gibbs_check(MOD, v, 0.3, [40], mode="measure", cloud=M.liouville_sample_array(2000, rng_for(1)))


# ----------------------------------------------------------------- reports


def test_identity_report_is_all_zero():
    rep = ruelle_report("identity", "lebesgue", {"cloud": 5000})
    assert rep.complete
    for method in rep.h_estimates:
        assert rep.h(method) == pytest.approx(0.0, abs=1e-12)
    assert rep.chi_plus == 0.0 and rep.slack == pytest.approx(0.0, abs=1e-12)


def test_doubling_lebesgue_report():
    rep = ruelle_report("doubling", "lebesgue", SMALL["doubling"])
    assert rep.slack >= -0.1
    gap, ok = pesin_check(rep)
    assert ok and gap <= 0.1
    # the potential integrates to -chi+, so |pressure| equals the Pesin gap
    assert abs(rep.pressure) == pytest.approx(gap, abs=1e-12)
    assert rep.best_method == "katok"
    assert "Ruelle holds numerically" in rep.verdict


def test_doubling_periodic_orbit_report():
    rep = ruelle_report("doubling", "periodic-orbit", SMALL["doubling"])
    assert rep.slack >= 0.8 * np.log(2)
    assert rep.pressure <= 0
    with pytest.raises(ValueError):
        pesin_check(rep)


def test_report_serialization():
    rep = ruelle_report("identity", "periodic-orbit", {"cloud": 2000})
    data = json.loads(rep.to_json())
    assert data["system"] == "identity" and data["measure"] == "periodic-orbit"
    rows = list(csv.DictReader(io.StringIO(csv_text(rep.csv_rows()))))
    assert {r["method"] for r in rows} == set(rep.h_estimates)
    assert float(rows[0]["chi_plus"]) == rep.chi_plus


def test_csv_text_uses_round_trip_precision():
    text = csv_text([{"a": 1 / 3, "b": "x"}])
    assert float(text.splitlines()[1].split(",")[0]) == 1 / 3
