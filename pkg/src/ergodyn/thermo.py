"""Birkhoff sums, Gibbs diagnostics, Ruelle and Pesin reports, pressure."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import SystemModel, ball_volume_boxed, exit_times, iterate, rng_for
from .entropy import (
    MIN_BALL_COUNT,
    EntropyEstimate,
    SampleCloud,
    UnresolvedEstimate,
    brin_katok_panel,
    katok_entropy,
    lsq_slope,
    returning_times,
    riemannian_local_entropy,
)
from .defaults import TOLERANCES, system_defaults
from .lyapunov import chi_plus, qr_spectrum
from .models import CHI_PLUS, CompactWindow, base_points, get_system, sample_measure

ABSOLUTELY_CONTINUOUS = {"lebesgue", "liouville"}

Potential = Callable[[np.ndarray], np.ndarray]


def geometric_potential(system: SystemModel) -> Potential:
    """F^su = -d/dt log J^su; constant for every bundled system."""
    value = -CHI_PLUS[system.id]
    return lambda states: np.full(len(states), value)


def indicator_potential(system: SystemModel, y_max: float) -> Potential:
    return lambda states: system.in_window(states, y_max).astype(float)


def birkhoff_sum(system: SystemModel, v, T: int, potential: Optional[Potential] = None) -> float:
    """Sum of the potential over v, T v, ..., T^{T-1} v (0 for T = 0)."""
    if T < 0:
        raise ValueError("T must be non-negative")
    if T == 0:
        return 0.0
    potential = potential or geometric_potential(system)
    return float(np.sum(potential(iterate(system, v, T).states)))


def birkhoff_average(system: SystemModel, v, T: int, potential: Optional[Potential] = None) -> float:
    if T < 1:
        raise ValueError("T must be at least 1")
    return birkhoff_sum(system, v, T, potential) / T


@dataclass
class GibbsDiagnostics:
    v: np.ndarray
    r: float
    rows: list  # (T, log_ball_mass, birkhoff_sum, ratio)
    ratio_spread: float
    slope: float
    passed: bool
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"v": np.asarray(self.v).tolist(), "r": self.r, "rows": [list(r) for r in self.rows],
                "ratio_spread": self.ratio_spread, "slope": self.slope, "passed": self.passed,
                "diagnostics": self.diagnostics}


def _cloud_mass(system: SystemModel, cloud: np.ndarray, v, r: float, n: int, index=None) -> int:
    if index is not None:
        cand = index.query(system.as_batch(v)[0], r)
        pts = cloud[cand]
    else:
        pts = cloud
    if len(pts) == 0:
        return 0
    return int((exit_times(system, v, pts, r, n) >= n).sum())


def gibbs_check(system: SystemModel, v, r: float, T_list, mode: str = "volume", cloud: np.ndarray | None = None,
                window: CompactWindow | None = None, n_samples: int = 100_000, seed: int = 0, c: float = 0.0,
                potential: Optional[Potential] = None, log_c_max: float = float(np.log(20.0)),
                min_count: int = MIN_BALL_COUNT) -> GibbsDiagnostics:
    """Compare the mass of B_T(v, r) with exp(S_T F - cT) over returning times T.

    The continuous-time ball B_T contains the endpoints 0..T, i.e. it is the
    discrete ball with T + 1 iterates. ``mode='measure'`` counts an empirical
    invariant cloud; ``mode='volume'`` uses reference volume normalized to a
    probability, which is Liouville measure on the geodesic model.
    """
    T_list = list(T_list)
    if sorted(T_list) != T_list:
        raise ValueError("T_list must be ascending")
    if mode not in ("volume", "measure"):
        raise ValueError("mode must be 'volume' or 'measure'")
    if mode == "measure" and cloud is None:
        raise ValueError("measure mode needs a cloud")
    potential = potential or geometric_potential(system)
    v = system.as_batch(v)[0]
    orbit = iterate(system, v, max(T_list) + 1).states
    y_max = None if window is None else window.y_max
    inside = (np.ones(len(orbit), dtype=bool) if y_max is None or system.in_window is None
              else system.in_window(orbit, y_max))
    if not inside[0]:
        raise ValueError("v must lie in the window")
    index = system.prefilter(cloud) if (mode == "measure" and system.prefilter is not None) else None
    fvals = potential(orbit)
    rows, skipped, unresolved = [], [], []
    for k, T in enumerate(T_list):
        if not inside[T]:
            skipped.append(T)
            continue
        if mode == "volume":
            est = ball_volume_boxed(system, v, T + 1, r, n_samples, seed, stream=k)
            if est.n_accepted < min_count:
                unresolved.append(T)
                continue
            log_mass = float(np.log(est.mean / system.total_volume))
        else:
            count = _cloud_mass(system, cloud, v, r, T + 1, index)
            if count < min_count:
                unresolved.append(T)
                continue
            log_mass = float(np.log(count / len(cloud)))
        s = float(np.sum(fvals[:T]))
        rows.append((T, log_mass, s, log_mass - (s - c * T)))
    if not rows:
        raise UnresolvedEstimate("no returning T with a resolved ball mass")
    ratios = [row[3] for row in rows]
    spread = float(max(ratios) - min(ratios))
    slope = lsq_slope([row[0] for row in rows], [row[1] for row in rows]) if len(rows) > 1 else float("nan")
    diag = {"mode": mode, "skipped_not_returning": skipped, "unresolved": unresolved,
            "n_samples": n_samples if mode == "volume" else len(cloud), "seed": seed, "c": c}
    return GibbsDiagnostics(v, r, rows, spread, float(slope), spread <= log_c_max, diag)


def gibbs_base_points(system: SystemModel, cloud: np.ndarray, k: int, r: float, window: CompactWindow | None,
                      T_max: int, min_returns: int | None = None) -> np.ndarray:
    """Base vectors for Gibbs checks: usable ball centers that return to the window often enough to fit a slope.

    ``min_returns`` defaults to T_max // 2 returning times in 1..T_max.
    """
    need = T_max // 2 if min_returns is None else min_returns
    return base_points(system, cloud, k, r, window,
                       accept=lambda v: len(returning_times(system, v, window, T_max)) >= need)


# --- Ruelle / Pesin ----------------------------------------------------------

@dataclass
class RuelleReport:
    system: str
    measure: str
    h_estimates: dict  # method -> EntropyEstimate (lower surrogate) or None when unresolved
    chi_plus: float
    slack: float
    pesin_gap: Optional[float]
    pressure: float
    integral_potential: float
    best_method: str
    complete: bool
    verdict: str
    tol: float = 0.1
    diagnostics: dict = field(default_factory=dict)

    def h(self, method: str) -> float:
        e = self.h_estimates.get(method)
        return float("nan") if e is None or not e.resolved else e.value

    def to_dict(self) -> dict:
        return {
            "system": self.system, "measure": self.measure,
            "h_estimates": {k: (None if e is None else e.to_dict()) for k, e in self.h_estimates.items()},
            "chi_plus": self.chi_plus, "slack": self.slack, "pesin_gap": self.pesin_gap,
            "pressure": self.pressure, "integral_potential": self.integral_potential,
            "best_method": self.best_method, "complete": self.complete, "verdict": self.verdict,
            "tol": self.tol, "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=json_default)

    def csv_rows(self) -> list:
        rows = []
        for method, e in self.h_estimates.items():
            rows.append({
                "system": self.system, "measure": self.measure, "method": method,
                "h": float("nan") if e is None else e.value,
                "r": float("nan") if e is None else e.r,
                "resolved": e is not None and e.resolved,
                "chi_plus": self.chi_plus, "slack": self.slack,
                "pesin_gap": float("nan") if self.pesin_gap is None else self.pesin_gap,
                "pressure": self.pressure,
            })
        return rows


def json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, CompactWindow):
        return {"y_max": o.y_max}
    raise TypeError(f"cannot serialize {type(o).__name__}")


def csv_text(rows: list) -> str:
    """CSV with floats written at 17 significant digits."""
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def _resolved(e):
    return e if (e is not None and e.resolved) else None


def ruelle_report(system_id: str, measure: str, config: dict | None = None) -> RuelleReport:
    """Entropy estimates for (system, measure) against chi+, with slack, Pesin gap and pressure.

    The slack uses the estimators of h_mu (Katok and Brin-Katok). The
    Riemannian local entropy measures volume decay at mu-typical points, which
    bounds h_mu from above rather than estimating it, so it is reported
    alongside but kept out of the slack.
    """
    system = get_system(system_id)
    cfg = system_defaults(system_id)
    cfg.update(config or {})
    seed = int(cfg.get("seed", 0))
    tol = float(cfg.get("tol", TOLERANCES["ruelle"]))
    window = CompactWindow(cfg["window"]) if cfg.get("window") else None
    pts = sample_measure(system, measure, cfg["cloud"], rng_for(seed, 1), cfg.get("point_file"))
    cloud = SampleCloud(pts, measure, seed)
    errors = {}

    katok = None
    try:
        katok, _ = katok_entropy(system, cloud, cfg["delta"], cfg["r_list"], cfg["n_list"])
    except (UnresolvedEstimate, ValueError) as exc:
        errors["katok"] = str(exc)

    panel_pts = _panel_points(system, pts, cfg["panel"], max(cfg["r_list"]), window)
    bk = None
    try:
        panel = brin_katok_panel(system, cloud, panel_pts, cfg["r_list"], cfg["n_list"])
        bk = _median_estimate(panel.lower, "brin-katok")
        bk.diagnostics["panel_spread"] = panel.spread
    except UnresolvedEstimate as exc:
        errors["brin-katok"] = str(exc)

    riem = None
    try:
        riem_pts = _panel_points(system, pts, cfg["riem_panel"], max(cfg["riem_r_list"]), window)
        lows = [riemannian_local_entropy(system, x, window, cfg["riem_r_list"], cfg["riem_n_list"],
                                         cfg["n_samples"], seed + 100 + k, proposal=cfg["volume_proposal"])[0]
                for k, x in enumerate(riem_pts)]
        riem = _median_estimate(lows, "riemannian-local")
    except (UnresolvedEstimate, ValueError, RuntimeError) as exc:
        errors["riemannian-local"] = str(exc)

    spec = qr_spectrum(system, _generic_point(system, pts), int(cfg.get("lyapunov_steps", 2000)), seed)
    chi = chi_plus(spec)
    estimates = {"katok": _resolved(katok), "brin-katok": _resolved(bk), "riemannian-local": _resolved(riem)}
    measured = [e.value for k, e in estimates.items() if e is not None and k != "riemannian-local"]
    slack = chi - max(measured) if measured else float("nan")
    if estimates["katok"] is not None:
        best_method = "katok"
    elif estimates["riemannian-local"] is not None:
        best_method = "riemannian-local"
    else:
        best_method = "brin-katok"
    best = estimates[best_method]
    h_best = best.value if best is not None else float("nan")
    integral = float(np.mean(geometric_potential(system)(pts)))
    pressure = h_best + integral
    gap = abs(h_best - chi) if measure in ABSOLUTELY_CONTINUOUS else None
    complete = all(e is not None for e in estimates.values())
    holds = np.isfinite(slack) and slack >= -tol
    verdict = ("Ruelle holds numerically" if holds else "Ruelle violated") + ("" if complete else " (partial)")
    diag = {"spectrum": spec.exponents, "spectrum_residual": spec.residual, "errors": errors,
            "config": {k: v for k, v in cfg.items() if k != "point_file"}}
    return RuelleReport(system_id, measure, estimates, chi, float(slack), gap, float(pressure), integral,
                        best_method, complete, verdict, tol, diag)


def _generic_point(system, pts):
    if system.id == "modular-geodesic":
        from .models import modular
        ok = modular.basepoint(pts).imag < 10.0
        return pts[np.flatnonzero(ok)[0]]
    return pts[0]


def _panel_points(system, pts, k, r, window):
    if system.id == "modular-geodesic":
        return base_points(system, pts, k, r, window)
    uniq = pts[:k] if len(np.unique(pts, axis=0)) >= k else np.unique(pts, axis=0)
    return uniq


def _median_estimate(estimates: list, method: str) -> EntropyEstimate:
    ok = [e for e in estimates if e.resolved]
    if not ok:
        raise UnresolvedEstimate(f"no resolved {method} estimate in the panel")
    ordered = sorted(ok, key=lambda e: e.value)
    vals = [e.value for e in ordered]
    mid = ordered[(len(ordered) - 1) // 2]
    out = EntropyEstimate(float(np.median(vals)), method, mid.r, mid.n_range, mid.delta, mid.window, True,
                          {"panel_values": vals, "panel_size": len(estimates), "resolved": len(ok)})
    return out


def pesin_check(report: RuelleReport, tol: float | None = None) -> tuple:
    """(gap, passed) for an absolutely continuous measure; refuses any other measure."""
    if report.measure not in ABSOLUTELY_CONTINUOUS:
        raise ValueError(f"Pesin's formula is only expected for the volume class, not {report.measure!r}")
    if report.pesin_gap is None or not np.isfinite(report.pesin_gap):
        raise UnresolvedEstimate("report has no resolved entropy estimate")
    if tol is None:
        tol = TOLERANCES["pesin"].get(report.system, TOLERANCES["pesin"]["default"])
    return report.pesin_gap, bool(report.pesin_gap <= tol)
