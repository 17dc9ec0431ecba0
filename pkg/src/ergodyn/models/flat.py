"""Flat testbeds: identity on [0, 1], the circle doubling map and the cat map."""
from __future__ import annotations

import numpy as np

from ..core import SystemModel

CAT_MATRIX = np.array([[2.0, 1.0], [1.0, 1.0]])
CAT_EXPONENT = float(np.log((3 + np.sqrt(5)) / 2))


def _wrap(d):
    """Signed representative of ``d`` modulo 1 in [-1/2, 1/2)."""
    return (np.asarray(d) + 0.5) % 1.0 - 0.5


def _circle_distance(a, b):
    d = np.abs(np.asarray(a) - np.asarray(b)) % 1.0
    return np.minimum(d, 1.0 - d)[..., 0]


def _torus_distance(a, b):
    return np.sqrt(np.sum(_wrap(np.asarray(a) - np.asarray(b)) ** 2, axis=-1))


def _uniform_ball(rng, size, dim):
    if dim == 1:
        return rng.uniform(-1.0, 1.0, size=(size, 1))
    g = rng.standard_normal((size, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * rng.random((size, 1)) ** (1.0 / dim)


def _ball_volume(dim, r):
    return 2 * r if dim == 1 else np.pi * r * r


def _periodic_sampler(dim):
    def sample(center, radius, rng, size):
        pts = (center + radius * _uniform_ball(rng, size, dim)) % 1.0
        return pts, np.full(size, _ball_volume(dim, radius) / size)
    return sample


def _periodic_embed(dim):
    def embed(orbit):
        n_pts = orbit.shape[0]
        return orbit.reshape(n_pts, -1), 1.0
    return embed


def identity_system() -> SystemModel:
    """Identity map of the unit interval with the usual metric and Lebesgue measure."""

    def sample(center, radius, rng, size):
        lo, hi = max(0.0, center[0] - radius), min(1.0, center[0] + radius)
        pts = rng.uniform(lo, hi, size=(size, 1))
        return pts, np.full(size, (hi - lo) / size)

    def ref_volume(center, radius):
        c = float(np.asarray(center).reshape(-1)[0])
        return min(1.0, c + radius) - max(0.0, c - radius)

    return SystemModel(
        id="identity",
        dim=1,
        state_shape=(1,),
        step=lambda x: np.array(x, dtype=float, copy=True),
        distance=lambda a, b: np.abs(np.asarray(a) - np.asarray(b))[..., 0],
        jacobian=lambda x: np.eye(1),
        chart_sample=sample,
        ref_volume_of_ball=ref_volume,
        chart_exp=lambda c, v: np.clip(c + v, 0.0, 1.0),
        chart_log=lambda c, p: p - c,
        chart_radius=0.5,
        check=lambda s: (s[..., 0] >= 0.0) & (s[..., 0] <= 1.0),
        embed=lambda orbit: (orbit.reshape(orbit.shape[0], -1), None),
    )


def doubling_system() -> SystemModel:
    return SystemModel(
        id="doubling",
        dim=1,
        state_shape=(1,),
        step=lambda x: (2.0 * np.asarray(x)) % 1.0,
        distance=_circle_distance,
        jacobian=lambda x: np.array([[2.0]]),
        chart_sample=_periodic_sampler(1),
        ref_volume_of_ball=lambda c, r: 2.0 * r,
        chart_exp=lambda c, v: (c + v) % 1.0,
        chart_log=lambda c, p: _wrap(p - c),
        chart_radius=0.5,
        check=lambda s: (s[..., 0] >= 0.0) & (s[..., 0] < 1.0),
        embed=_periodic_embed(1),
        volume_preserving=False,
    )


def cat_system() -> SystemModel:
    """Arnold's cat map on the flat torus with the Euclidean quotient metric."""
    return SystemModel(
        id="cat",
        dim=2,
        state_shape=(2,),
        step=lambda x: (np.asarray(x) @ CAT_MATRIX.T) % 1.0,
        distance=_torus_distance,
        jacobian=lambda x: CAT_MATRIX.copy(),
        chart_sample=_periodic_sampler(2),
        ref_volume_of_ball=lambda c, r: np.pi * r * r,
        chart_exp=lambda c, v: (c + v) % 1.0,
        chart_log=lambda c, p: _wrap(p - c),
        chart_radius=0.5,
        check=lambda s: np.all((s >= 0.0) & (s < 1.0), axis=-1),
        embed=_periodic_embed(2),
    )


def lebesgue_sample(system: SystemModel, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.random((n,) + system.state_shape)


def periodic_orbit_points(system_id: str) -> np.ndarray:
    """One period of a fixed low-period orbit used as an atomic invariant measure."""
    if system_id == "doubling":
        return np.array([[1.0 / 3.0], [2.0 / 3.0]])
    if system_id == "cat":
        # period-3 orbit of (1/2, 0) under the cat map mod 1
        return np.array([[0.5, 0.0], [0.0, 0.5], [0.5, 0.5]])
    if system_id == "identity":
        return np.array([[0.5]])
    raise KeyError(system_id)
