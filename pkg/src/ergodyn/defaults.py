"""Every numeric default used by the estimators and the command line, in one place.

Per-system blocks:
  cloud             size of the empirical invariant cloud
  r_list, n_list    radii (descending) and times (ascending) for Katok and Brin-Katok
  delta             Katok mass deficit
  panel             base points for the Brin-Katok panel
  riem_*            radii, times and panel size for the Riemannian local entropy
  n_samples         Monte-Carlo samples per reference-volume estimate
  window            height cap of the compact window (modular surface only)
  volume_proposal   'ball' (one r-ball sample set for all n) or 'box' (per-n linearized box)
"""
from __future__ import annotations

import copy

SYSTEM_DEFAULTS = {
    "identity": {"cloud": 20_000, "r_list": [0.1, 0.05], "n_list": list(range(1, 7)), "delta": 0.1,
                 "panel": 20, "riem_r_list": [0.1, 0.05], "riem_n_list": list(range(1, 7)),
                 "n_samples": 20_000, "riem_panel": 5, "window": None, "volume_proposal": "ball"},
    "doubling": {"cloud": 100_000, "r_list": [0.1, 0.05], "n_list": list(range(1, 13)), "delta": 0.1,
                 "panel": 20, "riem_r_list": [0.1, 0.05], "riem_n_list": list(range(1, 13)),
                 "n_samples": 1_000_000, "riem_panel": 5, "window": None, "volume_proposal": "ball"},
    "cat": {"cloud": 100_000, "r_list": [0.2, 0.1], "n_list": list(range(1, 9)), "delta": 0.1,
            "panel": 20, "riem_r_list": [0.2, 0.1], "riem_n_list": list(range(1, 11)),
            "n_samples": 200_000, "riem_panel": 5, "window": None, "volume_proposal": "box"},
    "modular-geodesic": {"cloud": 100_000, "r_list": [0.3, 0.2], "n_list": list(range(1, 7)), "delta": 0.1,
                         "panel": 20, "riem_r_list": [0.3, 0.2], "riem_n_list": list(range(1, 11)),
                         "n_samples": 100_000, "riem_panel": 5, "window": 2.5, "volume_proposal": "box"},
}

GIBBS = {"r": 0.3, "T_max": 10, "n_samples": 100_000, "window": 2.5, "base_points": 10,
         "log_c_max": 2.995732273553991, "mode": "volume"}  # log 20

LYAPUNOV = {"steps": 10_000}

TOLERANCES = {"ruelle": 0.1, "pesin": {"modular-geodesic": 0.15, "default": 0.1}}

MIN_BALL_COUNT = 50


def system_defaults(system_id: str) -> dict:
    return copy.deepcopy(SYSTEM_DEFAULTS[system_id])
