"""Geodesic flow on the unit tangent bundle of the modular surface.

Points of T^1(PSL(2,Z)\\H^2) are cosets Gamma*m with m in SL(2,R); the basepoint
is m.i and the flow is right multiplication by a_t = diag(e^{t/2}, e^{-t/2}).
Tangent vectors at m are written m*exp(X) with X in sl(2,R), expanded in the
frame (H, V, U):

    H = diag(1/2, -1/2)   flow direction
    V = [[0, 0], [1, 0]]  unstable horocycle (grows by e per unit time)
    U = [[0, 1], [0, 0]]  stable horocycle

Under right translation X -> a_1^{-1} X a_1, so the time-1 cocycle is
diag(1, e, 1/e) in this frame.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import qmc

from ..core import DivergenceError, SystemModel

REDUCTION_CAP = 10_000
CUSP_ABORT = 1e6

S_MAT = np.array([[0.0, -1.0], [1.0, 0.0]])
T_MAT = np.array([[1.0, 1.0], [0.0, 1.0]])
T_INV = np.array([[1.0, -1.0], [0.0, 1.0]])
A1 = np.diag([np.exp(0.5), np.exp(-0.5)])
A1_INV = np.diag([np.exp(-0.5), np.exp(0.5)])

FRAME = np.array([
    [[0.5, 0.0], [0.0, -0.5]],
    [[0.0, 0.0], [1.0, 0.0]],
    [[0.0, 1.0], [0.0, 0.0]],
])
COCYCLE = np.diag([1.0, np.e, np.exp(-1.0)])

# closed geodesic of the hyperbolic element [[2,1],[1,1]]
HYPERBOLIC_ELEMENT = np.array([[2.0, 1.0], [1.0, 1.0]])
PERIOD = 2.0 * np.arccosh(1.5)

# Haar density is 1/y^2 in (x, y, phi) and phi runs over an interval of length pi
TOTAL_VOLUME = np.pi ** 2 / 3.0


class ReductionError(DivergenceError):
    pass


class ChartError(ValueError):
    """The metric ball is not contained in one exponential-chart component."""


def normalize_sign(m: np.ndarray) -> np.ndarray:
    """Pick the representative of {m, -m} whose first nonzero entry is positive."""
    m = np.array(m, dtype=float, copy=True)
    flat = m.reshape(-1, 4)
    nz = flat != 0
    first = np.argmax(nz, axis=1)
    lead = flat[np.arange(len(flat)), first]
    flat *= np.where(lead < 0, -1.0, 1.0)[:, None]
    return flat.reshape(m.shape)


def _canonical_words(max_len: int = 3) -> np.ndarray:
    gens = [S_MAT, T_MAT, T_INV]
    seen = {}
    for length in range(max_len + 1):
        for word in itertools.product(range(3), repeat=length):
            g = np.eye(2)
            for k in word:
                g = g @ gens[k]
            g = normalize_sign(g[None])[0]
            key = tuple(np.round(g.ravel(), 9))
            seen.setdefault(key, g)
    return np.array(list(seen.values()))


GAMMAS = _canonical_words(3)
GAMMA_NORMS = np.linalg.norm(GAMMAS, ord=2, axis=(1, 2))


def basepoint(m: np.ndarray) -> np.ndarray:
    """z = m.i for a batch (or single) of determinant-one matrices."""
    m = np.asarray(m)
    a, b, c, d = m[..., 0, 0], m[..., 0, 1], m[..., 1, 0], m[..., 1, 1]
    den = c * c + d * d
    return ((a * c + b * d) + 1j) / den


def direction_angle(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m)
    w = m[..., 1, 0] * 1j + m[..., 1, 1]
    return (np.pi / 2 - 2 * np.angle(w)) % (2 * np.pi)


def reduce_batch(m: np.ndarray, cap: int = REDUCTION_CAP) -> np.ndarray:
    """Move every matrix to the standard fundamental domain by left PSL(2,Z) action."""
    m = np.array(m, dtype=float, copy=True)
    active = np.arange(len(m))
    for _ in range(cap):
        if len(active) == 0:
            break
        sub = m[active]
        a, b, c, d = sub[:, 0, 0], sub[:, 0, 1], sub[:, 1, 0], sub[:, 1, 1]
        den = c * c + d * d
        x = (a * c + b * d) / den
        # half-open strip; the slack keeps round-off at Re z = -1/2 from flipping sides
        k = np.floor(x + 0.5 + 1e-12)
        a = a - k * c
        b = b - k * d
        x = x - k
        y = 1.0 / den
        flip = x * x + y * y < 1.0 - 1e-12
        # S.m = [[-c, -d], [a, b]]
        na = np.where(flip, -c, a)
        nb = np.where(flip, -d, b)
        nc = np.where(flip, a, c)
        nd = np.where(flip, b, d)
        m[active] = np.stack([np.stack([na, nb], -1), np.stack([nc, nd], -1)], -2)
        active = active[flip]
    else:
        raise ReductionError(f"fundamental-domain reduction exceeded {cap} steps")
    return normalize_sign(m)


def _renormalize(m: np.ndarray) -> np.ndarray:
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    return m / np.sqrt(det)[..., None, None]


@dataclass(frozen=True)
class UnitTangentPSL2:
    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float).reshape(2, 2)
        if abs(np.linalg.det(m) - 1.0) > 1e-9:
            raise ValueError("unit tangent vectors are represented by determinant-one matrices")
        object.__setattr__(self, "m", m)

    @classmethod
    def from_matrix(cls, m) -> "UnitTangentPSL2":
        return reduce(m)

    @classmethod
    def from_basepoint(cls, z: complex, theta: float) -> "UnitTangentPSL2":
        return reduce(matrix_from_basepoint(z, theta))

    @property
    def basepoint(self) -> complex:
        return complex(basepoint(self.m))

    @property
    def angle(self) -> float:
        return float(direction_angle(self.m))

    def is_reduced(self, tol: float = 1e-9) -> bool:
        z = self.basepoint
        return abs(z.real) <= 0.5 + tol and abs(z) >= 1.0 - tol


def matrix_from_basepoint(z: complex, theta: float) -> np.ndarray:
    x, y = z.real, z.imag
    if y <= 0:
        raise ValueError("basepoint must lie in the upper half-plane")
    phi = (np.pi / 2 - theta) / 2
    na = np.array([[np.sqrt(y), x / np.sqrt(y)], [0.0, 1.0 / np.sqrt(y)]])
    k = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
    return na @ k


def reduce(m) -> UnitTangentPSL2:
    m = np.asarray(m, dtype=float).reshape(2, 2)
    if abs(np.linalg.det(m) - 1.0) > 1e-9:
        raise ValueError("reduce expects a determinant-one matrix")
    return UnitTangentPSL2(reduce_batch(m[None])[0])


def geodesic_step(m: np.ndarray) -> np.ndarray:
    """Time-1 map on a batch of reduced representatives."""
    out = reduce_batch(_renormalize(np.asarray(m) @ A1))
    y = basepoint(out).imag
    if np.any(y > CUSP_ABORT):
        raise DivergenceError(f"orbit entered the cusp beyond height {CUSP_ABORT:g}")
    return out


def geodesic_time1(v: UnitTangentPSL2) -> UnitTangentPSL2:
    return UnitTangentPSL2(geodesic_step(v.m[None])[0])


def _components(m):
    m = np.asarray(m)
    return m[..., 0, 0], m[..., 0, 1], m[..., 1, 0], m[..., 1, 1]


_GP, _GQ, _GR, _GS = (GAMMAS[:, i, j] for i, j in ((0, 0), (0, 1), (1, 0), (1, 1)))


def _min_lift_distance(a, b):
    """min over gamma and sign of ||gamma.a -+ b||_F^2 (one direction), gamma on a trailing axis."""
    a00, a01, a10, a11 = (x[..., None] for x in _components(a))
    b00, b01, b10, b11 = (x[..., None] for x in _components(b))
    c00 = _GP * a00 + _GQ * a10
    c01 = _GP * a01 + _GQ * a11
    c10 = _GR * a00 + _GS * a10
    c11 = _GR * a01 + _GS * a11
    dm = (c00 - b00) ** 2 + (c01 - b01) ** 2 + (c10 - b10) ** 2 + (c11 - b11) ** 2
    dp = (c00 + b00) ** 2 + (c01 + b01) ** 2 + (c10 + b10) ** 2 + (c11 + b11) ** 2
    return np.minimum(dm, dp).min(axis=-1)


def quotient_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Symmetrized Frobenius distance between cosets, over a finite gamma set."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    return np.sqrt(np.minimum(_min_lift_distance(a, b), _min_lift_distance(b, a)))


def sasaki_distance(v1: UnitTangentPSL2, v2: UnitTangentPSL2) -> float:
    return float(quotient_distance(v1.m, v2.m))


# --- exponential chart -----------------------------------------------------

def coords_to_algebra(x: np.ndarray) -> np.ndarray:
    return np.einsum("...k,kij->...ij", np.asarray(x, dtype=float), FRAME)


def algebra_to_coords(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X)
    return np.stack([X[..., 0, 0] - X[..., 1, 1], X[..., 1, 0], X[..., 0, 1]], axis=-1)


def _exp_coeffs(s):
    """(cosh sqrt s, sinh sqrt s / sqrt s) continued to s < 0."""
    s = np.asarray(s, dtype=float)
    pos = np.sqrt(np.maximum(s, 0.0))
    neg = np.sqrt(np.maximum(-s, 0.0))
    small = np.abs(s) < 1e-10
    with np.errstate(invalid="ignore", divide="ignore"):
        c0 = np.where(s >= 0, np.cosh(pos), np.cos(neg))
        c1 = np.where(s >= 0, np.sinh(pos) / np.where(pos > 0, pos, 1.0),
                      np.sin(neg) / np.where(neg > 0, neg, 1.0))
    c1 = np.where(small, 1.0 + s / 6.0, c1)
    return c0, c1


def expm_sl2(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    s = -(X[..., 0, 0] * X[..., 1, 1] - X[..., 0, 1] * X[..., 1, 0])
    c0, c1 = _exp_coeffs(s)
    return c0[..., None, None] * np.eye(2) + c1[..., None, None] * X


def logm_sl2(g: np.ndarray) -> np.ndarray:
    """Principal logarithm of SL(2,R) elements with trace > -2."""
    g = np.asarray(g, dtype=float)
    t = 0.5 * (g[..., 0, 0] + g[..., 1, 1])
    eps = t - 1.0
    with np.errstate(invalid="ignore", divide="ignore"):
        hyp = np.arccosh(np.maximum(t, 1.0)) / np.sqrt(np.maximum((t - 1) * (t + 1), 1e-300))
        ell = np.arccos(np.clip(t, -1.0, 1.0)) / np.sqrt(np.maximum((1 - t) * (1 + t), 1e-300))
    factor = np.where(t > 1, hyp, ell)
    factor = np.where(np.abs(eps) < 1e-8, 1.0 - eps / 3.0, factor)
    return factor[..., None, None] * (g - t[..., None, None] * np.eye(2))


def haar_density(x: np.ndarray) -> np.ndarray:
    """Jacobian of the exponential chart for Haar measure, normalized to 1 at 0."""
    x = np.asarray(x, dtype=float)
    s = x[..., 0] ** 2 / 4.0 + x[..., 1] * x[..., 2]
    _, c1 = _exp_coeffs(s)
    return c1 ** 2


def chart_exp(center: np.ndarray, x: np.ndarray) -> np.ndarray:
    m = np.asarray(center, dtype=float).reshape(2, 2)
    return reduce_batch(_renormalize(m @ expm_sl2(coords_to_algebra(x))))


def chart_log(center: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Chart coordinates of the lift of each point nearest to ``center``."""
    m = np.asarray(center, dtype=float).reshape(2, 2)
    pts = np.asarray(points, dtype=float).reshape(-1, 2, 2)
    minv = np.linalg.inv(m)
    best = np.full(len(pts), np.inf)
    best_g = np.tile(np.eye(2), (len(pts), 1, 1))
    for g in GAMMAS:
        h = minv @ (g @ pts)
        sign = np.where(h[:, 0, 0] + h[:, 1, 1] < 0, -1.0, 1.0)
        h = h * sign[:, None, None]
        err = np.sum((h - np.eye(2)) ** 2, axis=(1, 2))
        better = err < best
        best = np.where(better, err, best)
        best_g[better] = h[better]
    return algebra_to_coords(logm_sl2(best_g))


def _metric_form(m: np.ndarray) -> np.ndarray:
    B = np.einsum("ij,kjl->kil", m, FRAME)
    return np.einsum("kij,lij->kl", B, B)


def _sphere_directions(k: int = 1200) -> np.ndarray:
    i = np.arange(k) + 0.5
    z = 1 - 2 * i / k
    phi = np.pi * (1 + 5 ** 0.5) * i
    rad = np.sqrt(1 - z * z)
    return np.stack([rad * np.cos(phi), rad * np.sin(phi), z], axis=1)


_DIRECTIONS = _sphere_directions()
_RAY_STEPS = np.linspace(0.05, 4.0, 80)


@lru_cache(maxsize=4096)
def _ellipsoid_cached(key: bytes, r: float):
    m = np.frombuffer(key, dtype=float).reshape(2, 2)
    G = _metric_form(m)
    unit = np.linalg.inv(np.linalg.cholesky(G)).T  # |u| = 1  <->  ||m X||_F = 1
    dirs = _DIRECTIONS @ unit.T
    x = (r * _RAY_STEPS[:, None, None] * dirs[None]).reshape(-1, 3)
    d = quotient_distance(m, chart_exp(m, x)).reshape(len(_RAY_STEPS), -1)
    out = d >= r
    if not np.all(out.any(axis=0)):
        raise ChartError(f"radius {r} is too large for the exponential chart at this point")
    first_exit = _RAY_STEPS[np.argmax(out, axis=0)]
    rho = 1.15 * float(first_exit.max()) * r
    volume = 4.0 / 3.0 * np.pi * rho ** 3 / np.sqrt(np.linalg.det(G))
    return rho * unit, volume


def max_chart_height(r: float) -> float:
    """Height above which the r-ball wraps around the cusp.

    The translate T m lies at distance 1/sqrt(y) from m, so every point of the
    closed horocycle through m is within 1/(2 sqrt(y)) of m; once that is below
    r the ball contains the whole loop and no chart can see it as a ball.
    """
    return 1.0 / (4.0 * r * r)


def chart_ok(m: np.ndarray, r: float) -> bool:
    m = np.asarray(m, dtype=float).reshape(2, 2)
    if basepoint(m).imag > max_chart_height(r):
        return False
    try:
        _ellipsoid(m, r)
    except ChartError:
        return False
    return True


def _ellipsoid(m: np.ndarray, r: float):
    """Ellipsoidal proposal {||m X|| < rho} containing the chart component of the r-ball.

    rho is 15% beyond the largest exit radius found on a fixed set of rays.
    """
    m = np.ascontiguousarray(np.asarray(m, dtype=float).reshape(2, 2))
    if basepoint(m).imag > max_chart_height(r):
        raise ChartError(f"radius {r} wraps around the cusp at height {basepoint(m).imag:.3g}")
    return _ellipsoid_cached(m.tobytes(), float(r))


def _ball_support(m, r: float, dirs: np.ndarray) -> np.ndarray:
    """Support of the proposal ellipsoid along the columns of ``dirs``; inf where the chart fails."""
    try:
        transform, _ = _ellipsoid(m, r)
    except ChartError:
        return np.full(dirs.shape[1], np.inf)
    return np.linalg.norm(transform.T @ dirs, axis=0)


def _chart_region(m, r: float, vecs: np.ndarray) -> np.ndarray:
    """Which chart vectors lie in the proposal ellipsoid at m (all of them where the chart fails)."""
    try:
        transform, _ = _ellipsoid(m, r)
    except ChartError:
        return np.ones(len(vecs), dtype=bool)
    u = np.linalg.solve(transform, vecs.T)
    return np.sum(u * u, axis=0) < 1.0


def _unit_ball(rng, size):
    g = rng.standard_normal((size, 3))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * rng.random((size, 1)) ** (1.0 / 3.0)


def _chart_sample(center, radius, rng, size):
    m = np.asarray(center, dtype=float).reshape(2, 2)
    transform, volume = _ellipsoid(m, radius)
    x = _unit_ball(rng, size) @ transform.T
    pts = chart_exp(m, x)
    inside = quotient_distance(m, pts) < radius
    w = haar_density(x[inside]) * volume / size
    return pts[inside], w


@lru_cache(maxsize=1024)
def _ref_volume_cached(key: bytes, radius: float) -> float:
    m = np.frombuffer(key, dtype=float).reshape(2, 2)
    transform, volume = _ellipsoid(m, radius)
    cube = qmc.Sobol(d=3, scramble=True, seed=20240611).random_base2(m=18) * 2.0 - 1.0
    u = cube[np.sum(cube ** 2, axis=1) < 1.0]
    x = u @ transform.T
    inside = quotient_distance(m, chart_exp(m, x)) < radius
    return float(volume * np.sum(haar_density(x) * inside) / len(u))


def ref_volume_of_ball(center, radius: float) -> float:
    """Haar volume of the quotient-metric ball, by 2^18-point scrambled Sobol quadrature."""
    m = np.ascontiguousarray(np.asarray(center, dtype=float).reshape(2, 2))
    return _ref_volume_cached(m.tobytes(), float(radius))


class _LiftIndex:
    """Two kd-trees in R^4 answering quotient-ball candidate queries without radius inflation.

    ``d(a, b) < r`` means ``|gamma.a -+ b| < r`` or ``|gamma.b -+ a| < r`` for some
    gamma in the finite set. The first is a query of the plain points around
    every lift of ``a``; the second a query of every lift of the points around ``+-a``.
    """

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=float).reshape(-1, 2, 2)
        self.n = len(pts)
        self.plain = cKDTree(pts.reshape(-1, 4))
        self.lifted = cKDTree(np.einsum("gij,njk->gnik", GAMMAS, pts).reshape(-1, 4))

    def query(self, center: np.ndarray, r: float) -> np.ndarray:
        m = np.asarray(center, dtype=float).reshape(2, 2)
        lifts = (GAMMAS @ m).reshape(-1, 4)
        rad = r * (1 + 1e-9)
        hits = list(self.plain.query_ball_point(np.concatenate([lifts, -lifts]), rad))
        hits += list(self.lifted.query_ball_point(np.stack([m.ravel(), -m.ravel()]), rad))
        idx = np.concatenate([np.asarray(h, dtype=np.int64) for h in hits])
        return np.unique(idx % self.n)


def in_window(states: np.ndarray, y_max: float) -> np.ndarray:
    return basepoint(states).imag <= y_max


def jsu(v, t: float):
    """Unstable Jacobian of the time-t map; e^t in constant curvature -1."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return float(np.exp(t))


def fsu(states) -> np.ndarray:
    """Geometric potential F^su = -d/dt log J^su at t=0; identically -1 here."""
    if isinstance(states, UnitTangentPSL2):
        return -1.0
    states = np.asarray(states)
    return np.full(states.shape[:-2], -1.0)


def tangent_cocycle(v=None) -> np.ndarray:
    return COCYCLE.copy()


def liouville_sample_array(n: int, rng: np.random.Generator, return_stats: bool = False):
    """Haar/Liouville samples on the fundamental domain by rejection from a strip."""
    y0 = np.sqrt(3.0) / 2.0
    xs, ys, proposed = [], [], 0
    got = 0
    while got < n:
        k = max(1024, int(1.3 * (n - got)))
        x = rng.uniform(-0.5, 0.5, k)
        y = y0 / (1.0 - rng.random(k))
        ok = x * x + y * y >= 1.0
        xs.append(x[ok])
        ys.append(y[ok])
        proposed += k
        got += int(ok.sum())
    x = np.concatenate(xs)[:n]
    y = np.concatenate(ys)[:n]
    theta = rng.uniform(0.0, 2 * np.pi, n)
    phi = (np.pi / 2 - theta) / 2
    sy = np.sqrt(y)
    cp, sp = np.cos(phi), np.sin(phi)
    m = np.empty((n, 2, 2))
    m[:, 0, 0] = sy * cp + x / sy * sp
    m[:, 0, 1] = -sy * sp + x / sy * cp
    m[:, 1, 0] = sp / sy
    m[:, 1, 1] = cp / sy
    m = normalize_sign(m)
    if return_stats:
        # strip area with respect to dx dy / y^2 is 1 / y0; counts cover every proposal drawn
        return m, {"proposed": proposed, "accepted": got, "strip_area": 1.0 / y0}
    return m


def liouville_sample(n: int, seed: int) -> list[UnitTangentPSL2]:
    from ..core import rng_for
    return [UnitTangentPSL2(m) for m in liouville_sample_array(n, rng_for(seed, 0))]


def fundamental_domain_area(n: int, seed: int) -> float:
    """Monte-Carlo estimate of the hyperbolic area of the fundamental domain."""
    from ..core import rng_for
    _, stats = liouville_sample_array(n, rng_for(seed, 0), return_stats=True)
    return stats["strip_area"] * stats["accepted"] / stats["proposed"]


def closed_geodesic_frame() -> np.ndarray:
    """m with A.m = m.a_PERIOD for A = [[2,1],[1,1]]: the orbit of m closes up."""
    lam = (3 + np.sqrt(5)) / 2
    P = np.array([[1.0, -1.0], [lam - 2.0, -(1.0 / lam - 2.0)]])
    return P / np.sqrt(np.linalg.det(P))


def periodic_orbit_sample(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples of the flow-invariant probability measure on the closed geodesic."""
    m = closed_geodesic_frame()
    s = rng.uniform(0.0, PERIOD, n)
    a = np.zeros((n, 2, 2))
    a[:, 0, 0] = np.exp(s / 2)
    a[:, 1, 1] = np.exp(-s / 2)
    return reduce_batch(m @ a)


def modular_system() -> SystemModel:
    return SystemModel(
        id="modular-geodesic",
        dim=3,
        state_shape=(2, 2),
        step=geodesic_step,
        distance=quotient_distance,
        jacobian=tangent_cocycle,
        chart_sample=_chart_sample,
        ref_volume_of_ball=ref_volume_of_ball,
        chart_exp=chart_exp,
        chart_log=chart_log,
        chart_radius=0.5,
        chart_density=haar_density,
        check=lambda s: basepoint(s).imag <= CUSP_ABORT,
        prefilter=_LiftIndex,
        in_window=in_window,
        ball_support=_ball_support,
        chart_region=_chart_region,
        total_volume=TOTAL_VOLUME,
        meta={"frame": "H, V(unstable), U(stable)", "reference": "Haar, unit density at chart origin"},
    )
