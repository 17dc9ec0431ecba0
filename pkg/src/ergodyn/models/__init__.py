"""Registry of systems and of the invariant measures they can be sampled from."""
from __future__ import annotations

import numpy as np

from ..core import SystemModel
from . import flat, modular
from .windows import CompactWindow

SYSTEMS = {
    "identity": flat.identity_system,
    "doubling": flat.doubling_system,
    "cat": flat.cat_system,
    "modular-geodesic": modular.modular_system,
}

MEASURES = {
    "identity": ("lebesgue", "periodic-orbit", "point-file"),
    "doubling": ("lebesgue", "periodic-orbit", "point-file"),
    "cat": ("lebesgue", "periodic-orbit", "point-file"),
    "modular-geodesic": ("liouville", "periodic-orbit", "point-file"),
}

# largest upper Lyapunov sum of each system, used as the Ruelle bound oracle
CHI_PLUS = {
    "identity": 0.0,
    "doubling": float(np.log(2.0)),
    "cat": flat.CAT_EXPONENT,
    "modular-geodesic": 1.0,
}


def get_system(system_id: str) -> SystemModel:
    try:
        return SYSTEMS[system_id]()
    except KeyError:
        raise KeyError(f"unknown system {system_id!r}; choose from {sorted(SYSTEMS)}") from None


def sample_measure(system: SystemModel, measure: str, n: int, rng: np.random.Generator,
                   point_file: str | None = None) -> np.ndarray:
    """Draw ``n`` states from a named invariant measure of ``system``."""
    allowed = MEASURES[system.id]
    if measure not in allowed:
        raise ValueError(f"measure {measure!r} is not available for {system.id}; choose from {allowed}")
    if measure == "point-file":
        if point_file is None:
            raise ValueError("measure 'point-file' needs a point file")
        pts = read_points(system, point_file)
        return pts[:n] if n else pts
    if system.id == "modular-geodesic":
        if measure == "liouville":
            return modular.liouville_sample_array(n, rng)
        return modular.periodic_orbit_sample(n, rng)
    if measure == "lebesgue":
        return flat.lebesgue_sample(system, n, rng)
    orbit = flat.periodic_orbit_points(system.id)
    return orbit[rng.integers(0, len(orbit), n)]


COORDINATES = {"identity": ["x"], "doubling": ["x"], "cat": ["x", "y"], "modular-geodesic": ["a", "b", "c", "d"]}


def write_points(system: SystemModel, points: np.ndarray, path: str) -> None:
    """CSV point file: a header naming the coordinates, then one state per row at 17 significant digits."""
    flat = np.asarray(points, dtype=float).reshape(len(points), -1)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(COORDINATES[system.id]) + "\n")
        for row in flat:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_points(system: SystemModel, path: str) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if header != COORDINATES[system.id]:
        raise ValueError(f"{path}: expected columns {COORDINATES[system.id]}, found {header}")
    pts = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    pts = pts.reshape((-1,) + system.state_shape)
    system.validate(pts)
    return pts


def base_points(system: SystemModel, cloud: np.ndarray, k: int, r: float,
                window: CompactWindow | None = None, accept=None) -> np.ndarray:
    """First ``k`` cloud points usable as centers of r-balls (and inside the window).

    ``accept`` is an optional extra predicate on a single state.
    """
    keep = np.ones(len(cloud), dtype=bool)
    if system.id == "modular-geodesic":
        y = modular.basepoint(cloud).imag
        keep &= y <= modular.max_chart_height(r)
        if window is not None and window.y_max is not None:
            keep &= y <= window.y_max
    idx = np.flatnonzero(keep)
    chosen = []
    for i in idx:
        if system.id == "modular-geodesic" and not modular.chart_ok(cloud[i], r):
            continue
        if accept is None or accept(cloud[i]):
            chosen.append(i)
        if len(chosen) == k:
            break
    if len(chosen) < k:
        raise ValueError(f"only {len(chosen)} usable base points for r={r}")
    return cloud[chosen]


__all__ = ["SYSTEMS", "COORDINATES", "write_points", "read_points", "MEASURES", "CHI_PLUS", "CompactWindow", "get_system", "sample_measure", "base_points"]
