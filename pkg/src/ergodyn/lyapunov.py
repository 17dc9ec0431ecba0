"""Lyapunov spectra, tangent dynamical balls and their volume decay."""
from __future__ import annotations

from dataclasses import dataclass, field
from math import gamma, pi
from typing import Optional

import numpy as np
from scipy import integrate
from shapely.geometry import Polygon

from .core import NonInvertibleJacobian, SystemModel, VolumeEstimate, iterate, rng_for
from .entropy import lsq_slope, upper_half

CLUSTER_TOL = 0.05
DET_FLOOR = 1e-12


@dataclass
class LyapunovSpectrum:
    exponents: list  # [(lambda_j, dim_j)] sorted descending
    n_steps: int
    residual: float
    raw: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return sum(d for _, d in self.exponents)

    def values(self) -> np.ndarray:
        """Exponents repeated by multiplicity."""
        return np.array([lam for lam, d in self.exponents for _ in range(d)])


@dataclass
class TangentBall:
    """C(x, n, r): vectors v with |A_i v| < r for i < n, where A_i = cocycle[i-1] ... cocycle[0]."""

    cocycle: list
    r: float

    def __post_init__(self):
        if self.r <= 0:
            raise ValueError("r must be positive")
        if len(self.cocycle) < 1:
            raise ValueError("the cocycle needs at least one matrix")
        self.cocycle = [np.atleast_2d(np.asarray(a, dtype=float)) for a in self.cocycle]
        if not all(np.all(np.isfinite(a)) for a in self.cocycle):
            raise ValueError("cocycle matrices must be finite")

    @property
    def n(self) -> int:
        return len(self.cocycle)

    @property
    def dim(self) -> int:
        return self.cocycle[0].shape[0]

    def products(self) -> list:
        """A_0 = I, A_1, ..., A_{n-1}."""
        out = [np.eye(self.dim)]
        for a in self.cocycle[: self.n - 1]:
            out.append(a @ out[-1])
        return out


def _cluster(lams: np.ndarray, tol: float) -> list:
    groups = [[lams[0]]]
    for lam in lams[1:]:
        if groups[-1][-1] - lam <= tol:
            groups[-1].append(lam)
        else:
            groups.append([lam])
    return [(float(np.mean(g)), len(g)) for g in groups]


def qr_spectrum(system: SystemModel, x0, n_steps: int, seed: int = 0, tol: float = CLUSTER_TOL,
                random_frame: bool = False) -> LyapunovSpectrum:
    """Benettin QR iteration: running sums of log |diag R| divided by the step count.

    The initial frame is the identity unless ``random_frame`` asks for a
    seeded random orthogonal one; for a cocycle that is diagonal in the model
    frame the identity start has no transient at all.
    """
    if n_steps < 100:
        raise ValueError("n_steps must be at least 100")
    d = system.dim
    if random_frame:
        q, _ = np.linalg.qr(rng_for(seed, 0).standard_normal((d, d)))
    else:
        q = np.eye(d)
    x = system.as_batch(x0)
    system.validate(x, 0)
    sums = np.zeros(d)
    half = None
    with np.errstate(over="raise", invalid="raise"):
        for k in range(n_steps):
            jac = np.atleast_2d(system.jacobian(x[0]))
            q, r = np.linalg.qr(jac @ q)
            diag = np.abs(np.diag(r))
            det = float(np.prod(diag))  # |det jac|, since q is orthogonal
            if not np.isfinite(det) or det < DET_FLOOR:
                raise NonInvertibleJacobian(k, det)
            sums += np.log(diag)
            if k + 1 == n_steps // 2:
                half = np.sort(sums / (k + 1))[::-1]
            x = system.step(x)
            system.validate(x, k + 1)
    lams = np.sort(sums / n_steps)[::-1]
    residual = float(np.max(np.abs(lams - half)))
    return LyapunovSpectrum(_cluster(lams, tol), n_steps, residual, lams.tolist())


def chi_plus(spec: LyapunovSpectrum) -> float:
    return float(sum(lam * d for lam, d in spec.exponents if lam > 0))


def tangent_ball(system: SystemModel, x, n: int, r: float) -> TangentBall:
    orbit = iterate(system, x, n).states
    return TangentBall([np.atleast_2d(system.jacobian(s)) for s in orbit], r)


def _unit_ball_volume(d: int) -> float:
    return pi ** (d / 2) / gamma(d / 2 + 1)


def _box(ball: TangentBall, prods: list):
    """Half-widths and frame of a box containing C, aligned with A_{n-1}'s right singular vectors."""
    _, s, vt = np.linalg.svd(prods[-1])
    half = np.minimum(ball.r, ball.r / s)
    return half, vt.T


def _accept(prods: list, v: np.ndarray, r: float) -> np.ndarray:
    ok = np.ones(len(v), dtype=bool)
    for a in prods:
        w = v @ a.T
        ok &= np.sum(w * w, axis=1) < r * r
    return ok


def tangent_ball_samples(ball: TangentBall, n_samples: int, rng: np.random.Generator):
    """Uniform proposals in the bounding box; returns (points, accepted mask, box volume)."""
    prods = ball.products()
    half, frame = _box(ball, prods)
    w = rng.uniform(-1.0, 1.0, (n_samples, ball.dim)) * half
    v = w @ frame.T
    return v, _accept(prods, v, ball.r), float(np.prod(2 * half))


def tangent_ball_volume(ball: TangentBall, method: str = "monte-carlo", n_samples: int = 100_000,
                        seed: int = 0) -> VolumeEstimate:
    if method == "monte-carlo":
        if n_samples < 1000:
            raise ValueError("monte-carlo volumes need n_samples >= 1000")
        _, ok, box = tangent_ball_samples(ball, n_samples, rng_for(seed, ball.n))
        p = ok.mean()
        k = int(ok.sum())
        se = box * np.sqrt(p * (1 - p) / (n_samples - 1))
        return VolumeEstimate(float(box * p), float(se), n_samples, "monte-carlo", k, k == 0)
    if method == "exact-oracle":
        if ball.dim != 2 or ball.n > 12:
            raise ValueError("exact-oracle volumes are available for dim 2 and n <= 12")
        return VolumeEstimate(polygon_area(ball), 0.0, 0, "exact-oracle")
    raise ValueError(f"unknown method {method!r}")


def _ellipse_polygon(a: np.ndarray, r: float, k: int) -> Polygon:
    t = np.linspace(0.0, 2 * pi, k, endpoint=False)
    circle = r * np.stack([np.cos(t), np.sin(t)], axis=1)
    return Polygon(np.linalg.solve(a, circle.T).T)


def polygon_area(ball: TangentBall, k_min: int = 2 ** 10, k_max: int = 2 ** 16, rtol: float = 1e-3) -> float:
    """Area of the intersection of ellipses {|A_i v| < r} by polygon clipping, refined until stable."""
    prods = ball.products()
    prev = None
    k = k_min
    while True:
        region = _ellipse_polygon(prods[0], ball.r, k)
        for a in prods[1:]:
            region = region.intersection(_ellipse_polygon(a, ball.r, k))
        area = float(region.area)
        if prev is not None and abs(area - prev) <= rtol * area:
            return area
        if k >= k_max:
            return area
        prev, k = area, 2 * k


def diagonal_ball_volume(rates, n: int, r: float) -> float:
    """Oracle for a constant diagonal cocycle diag(e^{rates}) in dimension 2 or 3.

    |A_i v|^2 is a sum of exponentials in i, hence convex, so only i = 0 and
    i = n - 1 constrain the ball.
    """
    s = np.exp(np.asarray(rates, dtype=float) * (n - 1))
    if len(s) == 2:
        def height(v1):
            return max(0.0, min(np.sqrt(max(r * r - v1 * v1, 0.0)),
                                np.sqrt(max(r * r - (s[0] * v1) ** 2, 0.0)) / s[1]))
        lim = min(r, r / s[0])
        val, _ = integrate.quad(lambda v: 2 * height(v), -lim, lim, limit=200, epsabs=0, epsrel=1e-10)
        return float(val)
    if len(s) == 3:
        def top(v2, v1):
            a = r * r - v1 * v1 - v2 * v2
            b = r * r - (s[0] * v1) ** 2 - (s[1] * v2) ** 2
            if a <= 0 or b <= 0:
                return 0.0
            return 2 * min(np.sqrt(a), np.sqrt(b) / s[2])

        l1 = min(r, r / s[0])

        def v2_lim(v1):
            return min(np.sqrt(max(r * r - v1 * v1, 0.0)), np.sqrt(max(r * r - (s[0] * v1) ** 2, 0.0)) / s[1])

        val, _ = integrate.dblquad(top, -l1, l1, lambda v1: -v2_lim(v1), v2_lim, epsabs=0, epsrel=1e-8)
        return float(val)
    raise ValueError("diagonal oracle supports dimension 2 or 3")


@dataclass
class DecayReport:
    n_list: list
    volumes: list
    rates: list
    slope: float
    chi_plus: float
    method: str
    diagnostics: dict = field(default_factory=dict)

    @property
    def gap(self) -> float:
        return abs(self.slope - self.chi_plus)


def decay_rate(system: SystemModel, x, r: float, n_list, n_samples: int = 100_000, seed: int = 0,
               method: str = "monte-carlo", chi: Optional[float] = None, window_y: Optional[float] = None) -> DecayReport:
    """Volumes of C(x, n, r), rates -(1/n) log(vol / vol B(0, r)) and the fitted decay slope.

    Rates are measured relative to the r-ball so that a system without
    expansion has rate 0. The slope is a least-squares fit of -log vol
    against n over the upper half of ``n_list``.
    """
    n_list = list(n_list)
    if sorted(n_list) != n_list:
        raise ValueError("n_list must be ascending")
    full = tangent_ball(system, x, max(n_list), r)
    base = _unit_ball_volume(full.dim) * r ** full.dim
    vols = []
    for n in n_list:
        ball = TangentBall(full.cocycle[:n], r)
        v = tangent_ball_volume(ball, method, n_samples, seed)
        if v.underresolved:
            raise ValueError(f"tangent ball volume unresolved at n={n}")
        vols.append(v)
    logs = [-np.log(v.mean / base) for v in vols]
    rates = [lv / n for lv, n in zip(logs, n_list)]
    top = upper_half(n_list)
    slope = lsq_slope(top, [logs[n_list.index(n)] for n in top])
    if chi is None:
        chi = chi_plus(qr_spectrum(system, x, 1000, seed))
    diag = {"std_err": [v.std_err for v in vols], "fit_n": top,
            "log_deficit": excursion_deficit(system, x, max(n_list), window_y)}
    return DecayReport(n_list, [v.mean for v in vols], rates, float(slope), float(chi), method, diag)


def excursion_deficit(system: SystemModel, x, n: int, window_y: Optional[float]) -> float:
    """Sum of log+ |df| over orbit times spent outside the window (0 with no window)."""
    if window_y is None or system.in_window is None:
        return 0.0
    orbit = iterate(system, x, n).states
    outside = ~system.in_window(orbit, window_y)
    return float(sum(max(0.0, np.log(np.linalg.norm(np.atleast_2d(system.jacobian(s)), 2)))
                     for s, o in zip(orbit, outside) if o))


def linearized_ball_volume(system: SystemModel, x, n: int, r: float, n_samples: int = 100_000,
                           seed: int = 0) -> VolumeEstimate:
    """Reference volume of exp_x(C(x, n, r)) via tangent samples weighted by the chart density."""
    if r > system.chart_radius:
        raise ValueError(f"r={r} exceeds the chart radius of {system.id}")
    ball = tangent_ball(system, x, n, r)
    v, ok, box = tangent_ball_samples(ball, n_samples, rng_for(seed, n))
    dens = np.broadcast_to(np.asarray(system.chart_density(v[ok]), dtype=float), (int(ok.sum()),))
    contrib = np.zeros(n_samples)
    contrib[np.flatnonzero(ok)] = dens * box
    k = int(ok.sum())
    return VolumeEstimate(float(contrib.mean()), float(contrib.std(ddof=1) / np.sqrt(n_samples)),
                          n_samples, "monte-carlo", k, k == 0)


def sandwich_constants(volumes, n_list, chi: float, dim: int, eps: float = 0.1) -> tuple:
    """Tightest C, C' with C e^{-n(chi + d eps)} <= vol_n <= C' e^{-n(chi - d eps)} on the measured range."""
    v = np.asarray(volumes, dtype=float)
    n = np.asarray(n_list, dtype=float)
    lo = float(np.min(v * np.exp(n * (chi + dim * eps))))
    hi = float(np.max(v * np.exp(n * (chi - dim * eps))))
    return lo, hi


def oseledec_angle(system: SystemModel, x, n: int = 20) -> float:
    """Angle at T^n x between the most expanded direction (pushed from x) and the least expanded one."""
    orbit = iterate(system, x, 2 * n + 1).states
    a_past = np.eye(system.dim)
    for s in orbit[:n]:
        a_past = np.atleast_2d(system.jacobian(s)) @ a_past
    a_future = np.eye(system.dim)
    for s in orbit[n:2 * n]:
        a_future = np.atleast_2d(system.jacobian(s)) @ a_future
    u = np.linalg.svd(a_past)[0][:, 0]
    w = np.linalg.svd(a_future)[2][-1]
    c = abs(float(np.dot(u, w)))
    return float(np.arccos(min(1.0, c)))
