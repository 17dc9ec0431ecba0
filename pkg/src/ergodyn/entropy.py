"""Entropy estimators built on dynamical balls.

All limits are replaced by finite-scale slope fits: for each radius ``r`` a
least-squares slope over the upper half of the resolved ``n`` values (the
liminf surrogate) and the largest secant slope anchored at the first of those
``n`` (the limsup surrogate). The reported value is taken at the smallest
radius whose fit is resolved; the whole (r, n) surface stays in diagnostics.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .core import SystemModel, ball_volume_boxed, ball_volume_profile, exit_times, iterate, orbits
from .defaults import MIN_BALL_COUNT
from .models.windows import CompactWindow



class UnresolvedEstimate(RuntimeError):
    pass


class OrbitEscapesWindow(RuntimeError):
    pass


@dataclass
class SampleCloud:
    points: np.ndarray
    measure: str
    seed: Optional[int] = None

    def __len__(self):
        return len(self.points)


@dataclass
class EntropyEstimate:
    value: float
    method: str
    r: float
    n_range: tuple
    delta: Optional[float] = None
    window: Optional[CompactWindow] = None
    resolved: bool = True
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.resolved and self.n_range[1] <= self.n_range[0]:
            raise ValueError("n_max must exceed n_min")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["window"] = None if self.window is None else asdict(self.window)
        return out


# --- slope surrogates -------------------------------------------------------

def upper_half(ns: Sequence[int]) -> list:
    ns = list(ns)
    return ns[len(ns) // 2:] if len(ns) >= 4 else ns[-2:] if len(ns) >= 2 else ns


def lsq_slope(xs, ys) -> float:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    xc = xs - xs.mean()
    return float(np.dot(xc, ys - ys.mean()) / np.dot(xc, xc))


def max_secant(xs, ys) -> float:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    return float(np.max((ys[1:] - ys[0]) / (xs[1:] - xs[0])))


def _fit_series(ns, ys):
    """(lower, upper, fitted n's) from a growth/decay series, or None if < 2 points."""
    top = upper_half(ns)
    if len(top) < 2:
        return None
    sel = [ns.index(n) for n in top]
    y = [ys[i] for i in sel]
    return lsq_slope(top, y), max_secant(top, y), top


def _pick(per_r: list, method: str):
    """Choose the smallest resolved radius; per_r is ordered by descending r."""
    for cell in reversed(per_r):
        if cell["fit"] is not None:
            return cell
    return None


# --- dynamical neighbourhoods ----------------------------------------------

class DynamicalIndex:
    """Range queries for ``d_n`` on a fixed point cloud."""

    def __init__(self, system: SystemModel, points: np.ndarray, n: int, orbit: np.ndarray | None = None,
                 prefilter=None):
        self.system = system
        self.n = n
        self.orbit = orbits(system, points, n) if orbit is None else orbit[:, :n]
        self.N = len(self.orbit)
        self._tree = None
        self._pre = None
        if system.embed is not None:
            coords, box = system.embed(self.orbit)
            self._tree = cKDTree(coords, boxsize=box)
        elif system.prefilter is not None:
            self._pre = prefilter if prefilter is not None else system.prefilter(self.orbit[:, 0])

    def _candidates(self, i: int, r: float) -> np.ndarray:
        if self._tree is not None:
            coords, _ = self.system.embed(self.orbit[i:i + 1])
            return np.asarray(self._tree.query_ball_point(coords[0], r, p=np.inf), dtype=np.int64)
        if self._pre is not None:
            return self._pre.query(self.orbit[i, 0], r)
        return np.arange(self.N)

    def ball(self, i: int, r: float) -> np.ndarray:
        """Sorted indices j with d_n(p_i, p_j) < r."""
        alive = self._candidates(i, r)
        # the last time is the most selective under expansion, so test it first
        for t in [self.n - 1] + list(range(self.n - 1)):
            if len(alive) == 0:
                break
            ref = np.broadcast_to(self.orbit[i, t], (len(alive),) + self.system.state_shape)
            alive = alive[self.system.distance(ref, self.orbit[alive, t]) < r]
        return np.sort(alive)


def _greedy_balls(index: DynamicalIndex, r: float):
    covered = np.zeros(index.N, dtype=bool)
    centers, balls = [], []
    for i in range(index.N):
        if covered[i]:
            continue
        b = index.ball(i, r)
        centers.append(i)
        balls.append(b)
        covered[b] = True
    return centers, balls


def _prune(centers, balls, n_points):
    mult = np.bincount(np.concatenate(balls), minlength=n_points) if balls else np.zeros(n_points, int)
    keep = np.ones(len(centers), dtype=bool)
    for k in range(len(centers) - 1, -1, -1):
        b = balls[k]
        if len(b) and np.all(mult[b] >= 2):
            keep[k] = False
            mult[b] -= 1
    return [c for c, k in zip(centers, keep) if k], [b for b, k in zip(balls, keep) if k]


def separated_set(system: SystemModel, points, n: int, r: float, index: DynamicalIndex | None = None) -> list:
    """Greedy maximal (n, r)-separated subset, returned as indices into ``points``.

    Scanning in index order, a point is selected unless it lies within d_n < r
    of an already selected point, so every excluded point is certified covered.
    """
    if r <= 0:
        raise ValueError("r must be positive")
    index = index or DynamicalIndex(system, system.as_batch(points), n)
    return _greedy_balls(index, r)[0]


def covering(system: SystemModel, points, n: int, r: float, index: DynamicalIndex | None = None):
    """Greedy (n, r)-cover by balls centred at cloud points: (centers, member index arrays).

    Starts from the greedy separated set (which covers) and drops balls whose
    members are all covered by other retained balls.
    """
    if r <= 0:
        raise ValueError("r must be positive")
    index = index or DynamicalIndex(system, system.as_batch(points), n)
    centers, balls = _greedy_balls(index, r)
    return _prune(centers, balls, index.N)


def covering_count(system: SystemModel, points, n: int, r: float, index: DynamicalIndex | None = None) -> int:
    return len(covering(system, points, n, r, index)[0])


def mass_prefix_count(balls, n_points: int, delta: float) -> int:
    """Balls taken in decreasing-mass order until their union holds >= (1 - delta) of the cloud."""
    order = sorted(range(len(balls)), key=lambda k: (-len(balls[k]), k))
    need = (1.0 - delta) * n_points
    covered = np.zeros(n_points, dtype=bool)
    count = 0
    for used, k in enumerate(order, start=1):
        b = balls[k]
        fresh = b[~covered[b]]
        covered[fresh] = True
        count += len(fresh)
        if count >= need - 1e-9:
            return used
    return len(order)


def katok_counts(system: SystemModel, cloud: SampleCloud, deltas: Sequence[float],
                 r_list: Sequence[float], n_list: Sequence[int], stop_below: int | None = None) -> dict:
    """N-hat(delta, r, n) on one shared cover per (r, n).

    With ``stop_below`` set, once the mean cover-ball count at some n drops
    below it, the larger n for that r are recorded as skipped (N_hat None):
    balls only shrink with n, so those cells could not be resolved either.
    """
    for d in deltas:
        if not 0 < d < 1:
            raise ValueError("delta must lie in (0, 1)")
    pts = system.as_batch(cloud.points)
    orb = orbits(system, pts, max(n_list))
    pre = system.prefilter(orb[:, 0]) if system.embed is None and system.prefilter is not None else None
    table = {}
    for r in r_list:
        starved = False
        for n in n_list:
            if starved:
                for d in deltas:
                    table[(d, r, n)] = {"N_hat": None, "cover_size": None, "mean_ball_count": 0.0}
                continue
            index = DynamicalIndex(system, pts, n, orbit=orb, prefilter=pre)
            centers, balls = covering(system, pts, n, r, index)
            sizes = np.array([len(b) for b in balls])
            for d in deltas:
                nhat = mass_prefix_count(balls, len(pts), d)
                table[(d, r, n)] = {
                    "N_hat": nhat,
                    "cover_size": len(centers),
                    "mean_ball_count": float(sizes.mean()),
                }
            starved = stop_below is not None and sizes.mean() < stop_below
    return table


def katok_entropy(system: SystemModel, cloud: SampleCloud, delta: float, r_list, n_list,
                  min_ball_count: int = MIN_BALL_COUNT, counts: dict | None = None) -> tuple:
    """Katok delta-entropy surrogates: (lower, upper) EntropyEstimates."""
    r_list, n_list = list(r_list), list(n_list)
    if sorted(r_list, reverse=True) != r_list or sorted(n_list) != n_list:
        raise ValueError("r_list must be descending and n_list ascending")
    counts = counts or katok_counts(system, cloud, [delta], r_list, n_list, stop_below=min_ball_count)
    N = len(cloud)
    per_r, raw = [], []
    for r in r_list:
        ns, ys = [], []
        for n in n_list:
            c = counts[(delta, r, n)]
            if c["N_hat"] is None:
                raw.append({"r": r, "n": n, "N_hat": None, "log_N_hat": None, "mean_ball_count": 0.0,
                            "resolved": False, "skipped": True})
                continue
            ok = c["N_hat"] < N and c["mean_ball_count"] >= min_ball_count
            raw.append({"r": r, "n": n, "N_hat": c["N_hat"], "log_N_hat": float(np.log(c["N_hat"])),
                        "mean_ball_count": c["mean_ball_count"], "resolved": bool(ok)})
            if ok:
                ns.append(n)
                ys.append(float(np.log(c["N_hat"])))
        per_r.append({"r": r, "fit": _fit_series(ns, ys)})
    return _package(per_r, raw, "katok-delta", delta=delta, sizes={"cloud": N})


def _package(per_r, raw, method, delta=None, window=None, sizes=None, extra=None):
    chosen = _pick(per_r, method)
    diag = {"series": raw, "sample_sizes": sizes or {},
            "per_r": [{"r": c["r"], "lower": None if c["fit"] is None else c["fit"][0],
                       "upper": None if c["fit"] is None else c["fit"][1],
                       "fit_n": None if c["fit"] is None else list(c["fit"][2])} for c in per_r]}
    if extra:
        diag.update(extra)
    if chosen is None:
        nan = EntropyEstimate(float("nan"), method, float("nan"), (0, 0), delta, window, False, diag)
        return nan, nan
    lower, upper, top = chosen["fit"]
    rng = (int(top[0]), int(top[-1]))
    lo = EntropyEstimate(max(lower, 0.0), method, chosen["r"], rng, delta, window, True, diag)
    hi = EntropyEstimate(max(upper, 0.0), method, chosen["r"], rng, delta, window, True, diag)
    return lo, hi


def ball_masses(system: SystemModel, cloud: SampleCloud, x, r: float, n_max: int) -> np.ndarray:
    """Cloud counts inside B_n(x, r) for n = 1..n_max."""
    times = exit_times(system, x, cloud.points, r, n_max)
    return np.array([(times >= n).sum() for n in range(1, n_max + 1)])


def brin_katok_local(system: SystemModel, cloud: SampleCloud, x, r_list, n_list,
                     min_ball_count: int = MIN_BALL_COUNT) -> tuple:
    """Lower/upper local-entropy surrogates at ``x`` from empirical ball masses."""
    r_list, n_list = list(r_list), list(n_list)
    N = len(cloud)
    per_r, raw = [], []
    for r in r_list:
        counts = ball_masses(system, cloud, x, r, max(n_list))
        ns, ys = [], []
        for n in n_list:
            k = int(counts[n - 1])
            ok = k >= min_ball_count
            val = -np.log(k / N) if k > 0 else float("inf")
            raw.append({"r": r, "n": n, "count": k, "neg_log_mass": float(val), "resolved": bool(ok)})
            if ok:
                ns.append(n)
                ys.append(float(val))
        per_r.append({"r": r, "fit": _fit_series(ns, ys)})
    lo, hi = _package(per_r, raw, "brin-katok-lower", sizes={"cloud": N})
    hi.method = "brin-katok-upper"
    return lo, hi


@dataclass
class PanelResult:
    lower: list
    upper: list
    median_lower: float
    median_upper: float
    spread: float  # interquartile range of the lower values


def brin_katok_panel(system: SystemModel, cloud: SampleCloud, xs, r_list, n_list,
                     min_ball_count: int = MIN_BALL_COUNT) -> PanelResult:
    """Local entropies over a panel of base points plus an a.e.-constancy spread."""
    lows, highs = [], []
    for x in xs:
        lo, hi = brin_katok_local(system, cloud, x, r_list, n_list, min_ball_count)
        lows.append(lo)
        highs.append(hi)
    lv = np.array([e.value for e in lows if e.resolved])
    hv = np.array([e.value for e in highs if e.resolved])
    if len(lv) == 0:
        raise UnresolvedEstimate("no panel point produced a resolved local-entropy fit")
    q1, q3 = np.percentile(lv, [25, 75])
    return PanelResult(lows, highs, float(np.median(lv)), float(np.median(hv)), float(q3 - q1))


def returning_times(system: SystemModel, x, window: CompactWindow | None, n_max: int) -> list:
    """n in 1..n_max with T^n x inside the window."""
    if window is None or window.y_max is None or system.in_window is None:
        return list(range(1, n_max + 1))
    orb = iterate(system, x, n_max + 1).states
    inside = system.in_window(orb, window.y_max)
    return [n for n in range(1, n_max + 1) if inside[n]]


def riemannian_local_entropy(system: SystemModel, x, window: CompactWindow | None, r_list, n_list,
                             n_samples: int, seed: int, min_accepted: int = MIN_BALL_COUNT,
                             proposal: str = "ball") -> tuple:
    """Decay rate of the reference volume of B_n(x, r) along returns of x to the window.

    ``proposal='ball'`` draws one sample set in the r-ball and reuses it for
    every n; ``proposal='box'`` draws a fresh set per n from the bounding box of
    the linearized dynamical ball, which keeps large n resolved.
    """
    if proposal not in ("ball", "box"):
        raise ValueError("proposal must be 'ball' or 'box'")
    r_list, n_list = list(r_list), list(n_list)
    if window is not None and window.y_max is not None and system.in_window is not None:
        if not system.in_window(system.as_batch(x), window.y_max)[0]:
            raise ValueError("x must lie in the window")
    returning = set(returning_times(system, x, window, max(n_list)))
    usable = [n for n in n_list if n in returning]
    if not usable:
        raise OrbitEscapesWindow("orbit escapes window: no returning n in range")
    per_r, raw = [], []
    for k, r in enumerate(r_list):
        if proposal == "ball":
            prof = ball_volume_profile(system, x, max(n_list), r, n_samples, seed, stream=k)
        ns, ys = [], []
        for n in n_list:
            if proposal == "ball":
                v = prof[n - 1]
            elif n in returning:
                v = ball_volume_boxed(system, x, n, r, n_samples, seed, stream=k)
            else:
                continue
            ok = n in returning and v.n_accepted >= min_accepted
            val = -np.log(v.mean) if v.mean > 0 else float("inf")
            raw.append({"r": r, "n": n, "volume": v.mean, "std_err": v.std_err, "accepted": v.n_accepted,
                        "neg_log_volume": float(val), "returning": n in returning, "resolved": bool(ok)})
            if ok:
                ns.append(n)
                ys.append(float(val))
        per_r.append({"r": r, "fit": _fit_series(ns, ys)})
    excluded = [n for n in n_list if n not in returning]
    lo, hi = _package(per_r, raw, "riemannian-local", window=window, sizes={"n_samples": n_samples},
                      extra={"excluded_by_window": excluded, "seed": seed, "proposal": proposal})
    return lo, hi
