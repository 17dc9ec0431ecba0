"""System abstraction, orbits, dynamical distances and dynamical-ball volumes.

States are numpy arrays. A single state has shape ``system.state_shape``;
batches carry a leading axis. Every system callable works on batches.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np


class DivergenceError(RuntimeError):
    """An orbit left the numerically representable region."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message if index is None else f"{message} (step {index})")
        self.index = index


class NonInvertibleJacobian(RuntimeError):
    def __init__(self, index: int, det: float):
        super().__init__(f"jacobian is numerically singular at step {index} (|det|={det:.3e})")
        self.index = index
        self.det = det


@dataclass
class SystemModel:
    """A discrete-time smooth system on a metric space with a reference volume.

    ``chart_sample(center, radius, rng, size)`` draws ``size`` proposals in a
    chart around ``center`` and returns the points that fall inside the metric
    ``radius``-ball together with importance weights; the weights are scaled
    so that ``weights.sum()`` is an unbiased estimate of the reference volume
    of the ball.
    """

    id: str
    dim: int
    state_shape: tuple
    step: Callable[[np.ndarray], np.ndarray]
    distance: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    chart_sample: Callable[..., tuple]
    ref_volume_of_ball: Callable[[np.ndarray, float], float]
    chart_exp: Callable[[np.ndarray, np.ndarray], np.ndarray]
    chart_log: Callable[[np.ndarray, np.ndarray], np.ndarray]
    chart_radius: float = 0.5
    chart_density: Callable[[np.ndarray], float] = lambda x: 1.0
    check: Optional[Callable[[np.ndarray], np.ndarray]] = None
    embed: Optional[Callable[[np.ndarray], tuple]] = None
    prefilter: Optional[Callable[[np.ndarray], Any]] = None
    in_window: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    ball_support: Optional[Callable[[np.ndarray, float, np.ndarray], np.ndarray]] = None
    chart_region: Optional[Callable[[np.ndarray, float, np.ndarray], np.ndarray]] = None
    total_volume: float = 1.0
    volume_preserving: bool = True
    meta: dict = field(default_factory=dict)

    def as_batch(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape == self.state_shape:
            return x[None]
        if x.shape[1:] != self.state_shape:
            raise ValueError(f"{self.id}: expected state shape {self.state_shape}, got {x.shape}")
        return x

    def validate(self, states: np.ndarray, index: int | None = None) -> None:
        flat = states.reshape(len(states), -1)
        if not np.all(np.isfinite(flat)):
            raise DivergenceError(f"{self.id}: non-finite coordinates", index)
        if self.check is not None:
            bad = ~self.check(states)
            if np.any(bad):
                raise DivergenceError(f"{self.id}: state left the admissible region", index)


@dataclass
class OrbitSegment:
    base: np.ndarray
    n: int
    states: np.ndarray


@dataclass
class VolumeEstimate:
    mean: float
    std_err: float
    n_samples: int
    method: str
    n_accepted: int = 0
    underresolved: bool = False

    def __post_init__(self):
        if self.mean < 0 or self.std_err < 0:
            raise ValueError("volume estimates are non-negative")
        if self.method == "exact-oracle" and self.std_err != 0:
            raise ValueError("exact-oracle estimates carry no sampling error")


def rng_for(seed: int, *index: int) -> np.random.Generator:
    """Independent stream for task ``index`` under master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), *map(int, index)]))


def iterate(system: SystemModel, x, n: int) -> OrbitSegment:
    if n < 1:
        raise ValueError("n must be >= 1")
    cur = system.as_batch(x)
    system.validate(cur, 0)
    states = np.empty((n,) + system.state_shape)
    states[0] = cur[0]
    for i in range(1, n):
        cur = system.step(cur)
        system.validate(cur, i)
        states[i] = cur[0]
    return OrbitSegment(base=states[0].copy(), n=n, states=states)


def orbits(system: SystemModel, points: np.ndarray, n: int) -> np.ndarray:
    """Batch orbits, shape ``(N, n) + state_shape``."""
    cur = system.as_batch(points)
    out = np.empty((len(cur), n) + system.state_shape)
    out[:, 0] = cur
    for i in range(1, n):
        cur = system.step(cur)
        system.validate(cur, i)
        out[:, i] = cur
    return out


def dyn_distance(system: SystemModel, x, y, n: int) -> float:
    ox = iterate(system, x, n).states
    oy = iterate(system, y, n).states
    return float(np.max(system.distance(ox, oy)))


def in_dyn_ball(system: SystemModel, center, y, n: int, r: float) -> bool:
    if r <= 0:
        raise ValueError("r must be positive")
    return dyn_distance(system, center, y, n) < r


def exit_times(system: SystemModel, center, points: np.ndarray, r: float, n_max: int,
               center_orbit: np.ndarray | None = None) -> np.ndarray:
    """First time ``i < n_max`` with ``d(T^i c, T^i p) >= r``; ``n_max`` if none.

    ``p`` lies in ``B_n(c, r)`` iff its exit time is ``>= n``. Only points
    still inside the ball are iterated further.
    """
    pts = system.as_batch(points)
    if center_orbit is None:
        center_orbit = iterate(system, center, n_max).states
    out = np.full(len(pts), n_max, dtype=np.int64)
    alive = np.arange(len(pts))
    cur = pts
    for i in range(n_max):
        if i > 0:
            cur = system.step(cur)
            system.validate(cur, i)
        d = system.distance(np.broadcast_to(center_orbit[i], cur.shape), cur)
        leaving = d >= r
        out[alive[leaving]] = i
        keep = ~leaving
        alive, cur = alive[keep], cur[keep]
        if len(alive) == 0:
            break
    return out


def ball_volume_profile(system: SystemModel, center, n_max: int, r: float,
                        n_samples: int, seed: int, min_accepted: int = 1,
                        stream: int = 0) -> list[VolumeEstimate]:
    """Monte-Carlo reference volumes of ``B_n(center, r)`` for ``n = 1..n_max``.

    One sample set serves every ``n``, so the profile is monotone in ``n``.
    """
    if r > system.chart_radius:
        raise ValueError(f"r={r} exceeds the chart radius {system.chart_radius} of {system.id}")
    if n_samples < 1000:
        raise ValueError("monte-carlo volumes need n_samples >= 1000")
    rng = rng_for(seed, stream)
    center = system.as_batch(center)[0]
    pts, w = system.chart_sample(center, r, rng, n_samples)
    times = exit_times(system, center, pts, r, n_max) if len(pts) else np.zeros(0, dtype=np.int64)
    ests = []
    for n in range(1, n_max + 1):
        inside = times >= n
        contrib = np.zeros(n_samples)
        contrib[: len(pts)] = np.where(inside, w * n_samples, 0.0)
        mean = float(contrib.mean())
        se = float(contrib.std(ddof=1) / np.sqrt(n_samples))
        k = int(inside.sum())
        ests.append(VolumeEstimate(mean, se, n_samples, "monte-carlo", k, k < min_accepted))
    return ests


def ball_volume(system: SystemModel, center, n: int, r: float, n_samples: int, seed: int) -> VolumeEstimate:
    return ball_volume_profile(system, center, n, r, n_samples, seed)[-1]


def ball_support(system: SystemModel, state, r: float, dirs: np.ndarray) -> np.ndarray:
    """Support values, along the columns of ``dirs``, of a chart region containing the metric r-ball."""
    if system.ball_support is None:
        return r * np.linalg.norm(dirs, axis=0)
    return system.ball_support(state, r, dirs)


def _cocycle_products(system: SystemModel, orbit: np.ndarray) -> list:
    a = np.eye(system.dim)
    prods = [a]
    for s in orbit[:-1]:
        a = np.atleast_2d(system.jacobian(s)) @ a
        prods.append(a)
    return prods


def linearized_box(system: SystemModel, center, n: int, r: float, inflate: float = 1.0):
    """Box in chart coordinates containing B_n(x, r), scaled by ``inflate``.

    The time-t image of x exp(v) is T^t x exp(A_t v), so the ball lies in
    every A_t^{-1} E_t with E_t a chart region containing the r-ball at T^t x.
    In a fixed frame f_k the support of A_t^{-1} E_t is the support of E_t
    along A_t^{-T} f_k; the minimum over t bounds the intersection.
    Returns (half widths, frame).
    """
    orbit = iterate(system, center, n).states
    prods = _cocycle_products(system, orbit)
    frame = np.linalg.svd(prods[-1])[2].T
    half = np.full(system.dim, np.inf)
    for s, at in zip(orbit, prods):
        half = np.minimum(half, ball_support(system, s, r, np.linalg.solve(at.T, frame)))
    if not np.all(np.isfinite(half)):
        raise ValueError("no chart bound available for the dynamical ball")
    return inflate * half, frame


def ball_volume_boxed(system: SystemModel, center, n: int, r: float, n_samples: int, seed: int,
                      inflate: float = 1.0, stream: int = 0) -> VolumeEstimate:
    """Reference volume of B_n(center, r) with proposals uniform in ``linearized_box``.

    A proposal counts when it stays within r for n steps and, at every time,
    its chart coordinates A_t v lie in the chart region E_t around T^t x. The
    second condition keeps the estimate on the sheet of the ball through x,
    as ``ref_volume_of_ball`` does.
    """
    if n_samples < 1000:
        raise ValueError("monte-carlo volumes need n_samples >= 1000")
    center = system.as_batch(center)[0]
    half, frame = linearized_box(system, center, n, r, inflate)
    rng = rng_for(seed, stream, n)
    x = (rng.uniform(-1.0, 1.0, (n_samples, system.dim)) * half) @ frame.T
    inside = exit_times(system, center, system.chart_exp(center, x), r, n) >= n
    if system.chart_region is not None:
        orbit = iterate(system, center, n).states
        for s, at in zip(orbit, _cocycle_products(system, orbit)):
            idx = np.flatnonzero(inside)
            inside[idx] = system.chart_region(s, r, x[idx] @ at.T)
    box = float(np.prod(2 * half))
    dens = np.broadcast_to(np.asarray(system.chart_density(x), dtype=float), (n_samples,))
    contrib = np.where(inside, dens * box, 0.0)
    k = int(inside.sum())
    return VolumeEstimate(float(contrib.mean()), float(contrib.std(ddof=1) / np.sqrt(n_samples)),
                          n_samples, "monte-carlo", k, k == 0)


def finite_difference_jacobian(system: SystemModel, x, h: float = 1e-6) -> np.ndarray:
    """Central differences of ``step`` read through the system charts."""
    x = system.as_batch(x)[0]
    fx = system.step(x[None])[0]
    cols = []
    for k in range(system.dim):
        e = np.zeros(system.dim)
        e[k] = h
        plus = system.step(system.chart_exp(x, e[None]))
        minus = system.step(system.chart_exp(x, -e[None]))
        cols.append((system.chart_log(fx, plus)[0] - system.chart_log(fx, minus)[0]) / (2 * h))
    return np.stack(cols, axis=1)
