"""Command line: sample points, estimate exponents and entropies, check Gibbs, assemble reports."""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from importlib import metadata

import numpy as np
import scipy

from . import defaults
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .core import rng_for
from .entropy import SampleCloud, UnresolvedEstimate, brin_katok_panel, katok_entropy, riemannian_local_entropy
from .lyapunov import chi_plus, qr_spectrum
from .models import CompactWindow, base_points, get_system, sample_measure, write_points
from .thermo import json_default, csv_text, gibbs_base_points, gibbs_check, ruelle_report

EXIT_OK, EXIT_CONFIG, EXIT_UNRESOLVED = 0, 2, 3
SERIES_FIELDS = ("method", "r", "n", "value", "std_err", "resolved")


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("ERGODYN_THREADS", "1")))
    except ValueError:
        return 1


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=json_default) + "\n"


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _row(method, r, n, value, std_err=float("nan"), resolved=True) -> dict:
    return {"method": method, "r": float(r), "n": int(n), "value": float("nan") if value is None else float(value),
            "std_err": float(std_err), "resolved": bool(resolved)}


# --- stages -----------------------------------------------------------------

class Context:
    """Shared, read-only inputs of one run."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.system = get_system(cfg.system)
        self.base = defaults.system_defaults(cfg.system)
        size = cfg.cloud or self.base["cloud"]
        self.points = sample_measure(self.system, cfg.measure, size, rng_for(cfg.seed, 1), cfg.point_file)
        self.cloud = SampleCloud(self.points, cfg.measure, cfg.seed)

    def param(self, stage: dict, key: str, fallback: str | None = None):
        if key in stage:
            return stage[key]
        return self.base[fallback or key]

    def window(self, stage: dict):
        y = stage.get("window", self.base["window"])
        return CompactWindow(y) if y else None


def stage_lyapunov(ctx: Context, stage: dict, index: int):
    steps = stage.get("steps", defaults.LYAPUNOV["steps"])
    spec = qr_spectrum(ctx.system, ctx.points[0], steps, ctx.cfg.seed)
    rows = [_row("lyapunov", float("nan"), j, lam) for j, lam in enumerate(spec.raw)]
    return {"exponents": spec.exponents, "chi_plus": chi_plus(spec), "residual": spec.residual,
            "n_steps": steps}, rows, True


def stage_katok(ctx: Context, stage: dict, index: int):
    lo, hi = katok_entropy(ctx.system, ctx.cloud, ctx.param(stage, "delta"), ctx.param(stage, "r_list"),
                           ctx.param(stage, "n_list"))
    rows = [_row("katok", s["r"], s["n"], s["log_N_hat"], resolved=s["resolved"]) for s in lo.diagnostics["series"]]
    return {"lower": lo.to_dict(), "upper": hi.to_dict()}, rows, lo.resolved


def stage_brin_katok(ctx: Context, stage: dict, index: int):
    r_list, n_list = ctx.param(stage, "r_list"), ctx.param(stage, "n_list")
    pts = _panel(ctx, ctx.param(stage, "panel"), max(r_list), ctx.window(stage))
    panel = brin_katok_panel(ctx.system, ctx.cloud, pts, r_list, n_list)
    rows = []
    for i, est in enumerate(panel.lower):
        rows += [_row(f"brin-katok[{i}]", s["r"], s["n"], s["neg_log_mass"], resolved=s["resolved"])
                 for s in est.diagnostics["series"]]
    out = {"median_lower": panel.median_lower, "median_upper": panel.median_upper, "spread": panel.spread,
           "lower": [e.to_dict() for e in panel.lower]}
    return out, rows, True


def stage_riemannian(ctx: Context, stage: dict, index: int):
    r_list, n_list = ctx.param(stage, "r_list", "riem_r_list"), ctx.param(stage, "n_list", "riem_n_list")
    window = ctx.window(stage)
    pts = _panel(ctx, ctx.param(stage, "panel", "riem_panel"), max(r_list), window)
    ests, rows = [], []
    for i, x in enumerate(pts):
        lo, _ = riemannian_local_entropy(ctx.system, x, window, r_list, n_list, ctx.param(stage, "n_samples"),
                                         ctx.cfg.seed + 100 + i, proposal=stage.get("proposal", ctx.base["volume_proposal"]))
        ests.append(lo)
        for s in lo.diagnostics["series"]:
            if "volume" in s:
                rel = s["std_err"] / s["volume"] if s["volume"] > 0 else float("nan")
                rows.append(_row(f"riemannian-local[{i}]", s["r"], s["n"], s["neg_log_volume"], rel, s["resolved"]))
    vals = [e.value for e in ests if e.resolved]
    out = {"median": float(np.median(vals)) if vals else float("nan"), "estimates": [e.to_dict() for e in ests]}
    return out, rows, bool(vals)


def stage_gibbs(ctx: Context, stage: dict, index: int):
    g = defaults.GIBBS
    r = stage.get("r", g["r"])
    window = CompactWindow(stage.get("window", g["window"]))
    mode = stage.get("mode", g["mode"])
    T_max = stage.get("T_max", g["T_max"])
    T_list = list(range(0, T_max + 1))
    if ctx.system.id == "modular-geodesic":
        pts = gibbs_base_points(ctx.system, ctx.points, stage.get("base_points", g["base_points"]), r, window, T_max)
    else:
        pts = _panel(ctx, stage.get("base_points", g["base_points"]), r, window)
    results, rows, ok = [], [], True
    for i, v in enumerate(pts):
        try:
            d = gibbs_check(ctx.system, v, r, T_list, mode=mode, cloud=ctx.points, window=window,
                            n_samples=stage.get("n_samples", g["n_samples"]), seed=ctx.cfg.seed + i,
                            log_c_max=stage.get("log_c_max", g["log_c_max"]))
        except UnresolvedEstimate as exc:
            results.append({"error": str(exc)})
            ok = False
            continue
        results.append(d.to_dict())
        rows += [_row(f"gibbs[{i}]", r, T, ratio) for T, _, _, ratio in d.rows]
    return {"base_points": results}, rows, ok


def stage_report(ctx: Context, stage: dict, index: int):
    overrides = {k: v for k, v in stage.items() if k != "method"}
    overrides["seed"] = ctx.cfg.seed
    if ctx.cfg.cloud:
        overrides["cloud"] = ctx.cfg.cloud
    if ctx.cfg.point_file:
        overrides["point_file"] = ctx.cfg.point_file
    rep = ruelle_report(ctx.cfg.system, ctx.cfg.measure, overrides)
    rows = [_row(f"report:{r['method']}", r["r"], 0, r["h"], resolved=r["resolved"]) for r in rep.csv_rows()]
    return rep.to_dict(), rows, rep.complete


STAGES = {"lyapunov": stage_lyapunov, "katok": stage_katok, "brin-katok": stage_brin_katok,
          "riemannian-local": stage_riemannian, "gibbs": stage_gibbs, "report": stage_report}


def _panel(ctx: Context, k: int, r: float, window):
    if ctx.system.id == "modular-geodesic":
        return base_points(ctx.system, ctx.points, k, r, window)
    return ctx.points[:k]


def _run_stage(ctx: Context, stage: dict, index: int):
    start = time.perf_counter()
    try:
        payload, rows, ok = STAGES[stage["method"]](ctx, stage, index)
        err = None
    except (UnresolvedEstimate, RuntimeError, ValueError) as exc:
        payload, rows, ok, err = {}, [], False, f"{type(exc).__name__}: {exc}"
    return {"method": stage["method"], "resolved": ok, "error": err, "result": payload}, rows, time.perf_counter() - start


def execute(cfg: ExperimentConfig) -> int:
    os.makedirs(cfg.output, exist_ok=True)
    t0 = time.perf_counter()
    ctx = Context(cfg)
    timings = {"sample": time.perf_counter() - t0}
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        done = list(pool.map(lambda a: _run_stage(ctx, *a), [(s, i) for i, s in enumerate(cfg.stages)]))
    estimates = {"config_hash": cfg.hash, "system": cfg.system, "measure": cfg.measure, "seed": cfg.seed,
                 "stages": [d[0] for d in done]}
    series = [row for d in done for row in d[1]]
    for i, d in enumerate(done):
        timings[f"{i}:{d[0]['method']}"] = d[2]
    files = {"estimates.json": _dump(estimates), "series.csv": csv_text(series) or ",".join(SERIES_FIELDS) + "\n"}
    for name, text in files.items():
        with open(os.path.join(cfg.output, name), "w", newline="") as fh:
            fh.write(text)
    write_manifest(cfg.output, cfg.hash, list(files), timings)
    return EXIT_OK if all(d[0]["resolved"] for d in done) else EXIT_UNRESOLVED


def versions() -> dict:
    try:
        own = metadata.version("ergodyn")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"ergodyn": own, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def write_manifest(outdir: str, chash: str, names: list, timings: dict) -> str:
    inventory = [{"path": n, "sha256": _sha256(os.path.join(outdir, n)),
                  "bytes": os.path.getsize(os.path.join(outdir, n))} for n in sorted(names)]
    manifest = {"config_hash": chash, "versions": versions(), "wall_clock_seconds": timings, "files": inventory}
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w") as fh:
        fh.write(_dump(manifest))
    return path


# --- argument parsing ---------------------------------------------------------

def _floats(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list:
    out = []
    for part in text.split(","):
        if "-" in part.strip()[1:]:
            a, b = part.split("-")
            out.extend(range(int(a), int(b) + 1))
        elif part.strip():
            out.append(int(part))
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ergodyn", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="write a point file drawn from an invariant measure")
    s.add_argument("--system", required=True)
    s.add_argument("--measure", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("lyapunov", help="Lyapunov spectrum by QR iteration")
    s.add_argument("--system", required=True)
    s.add_argument("--measure", default=None, help="measure for the starting point (default: the volume class)")
    s.add_argument("--steps", type=int, default=defaults.LYAPUNOV["steps"])
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", default=None, help="optional JSON output path")

    for name, help_ in (("entropy", "one entropy estimator"), ("gibbs", "Gibbs-property diagnostics"),
                        ("report", "Ruelle/Pesin report with pressure")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", default=None, help="YAML config supplying defaults for the flags")
        s.add_argument("--system", default=None)
        s.add_argument("--measure", default=None, help="measure name or a point file path")
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--cloud", type=int, default=None)
        s.add_argument("--out", default=None, help="output directory")
        if name == "entropy":
            s.add_argument("--method", choices=["katok", "brin-katok", "riemannian-local"], default="katok")
        if name in ("entropy", "report"):
            s.add_argument("--r-list", type=_floats, default=None)
            s.add_argument("--n-list", type=_ints, default=None, help="e.g. 1-12 or 1,2,4")
            s.add_argument("--delta", type=float, default=None)
        if name == "gibbs":
            s.add_argument("--r", type=float, default=None)
            s.add_argument("--T-max", type=int, default=None)
            s.add_argument("--base-points", type=int, default=None)
            s.add_argument("--mode", choices=["volume", "measure"], default=None)
        s.add_argument("--n-samples", type=int, default=None)
        s.add_argument("--window", type=float, default=None)

    s = sub.add_parser("run", help="run every stage of a YAML config")
    s.add_argument("config")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", default=None)
    return p


def _config_from_flags(args, method: str) -> ExperimentConfig:
    """Start from --config (if any) and let explicit flags override its fields."""
    if args.config:
        base = load_config(args.config).raw
    else:
        base = {}
    data = {k: v for k, v in base.items() if k != "stages"}
    for key, flag in (("system", "system"), ("measure", "measure"), ("seed", "seed"), ("cloud", "cloud"),
                      ("output", "out")):
        val = getattr(args, flag, None)
        if val is not None:
            data[key] = val
    stage = next((dict(s) for s in base.get("stages", []) if s.get("method") == method), {"method": method})
    for key, flag in (("r_list", "r_list"), ("n_list", "n_list"), ("delta", "delta"), ("n_samples", "n_samples"),
                      ("window", "window"), ("r", "r"), ("T_max", "T_max"), ("base_points", "base_points"),
                      ("mode", "mode")):
        val = getattr(args, flag, None)
        if val is not None:
            stage[key] = val
    data["stages"] = [stage]
    data.setdefault("output", "out")
    return parse_config(json.dumps(data), args.config or "<flags>")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "sample":
            if args.n < 1:
                raise ConfigError("--n must be at least 1", None, "<flags>")
            system = get_system(args.system)
            pts = sample_measure(system, args.measure, args.n, rng_for(args.seed, 1))
            try:
                write_points(system, pts, args.out)
            except OSError as exc:
                print(f"error: cannot write {args.out}: {exc.strerror}", file=sys.stderr)
                return EXIT_CONFIG
            print(f"wrote {len(pts)} points to {args.out}")
            return EXIT_OK
        if args.command == "lyapunov":
            system = get_system(args.system)
            measure = args.measure or ("liouville" if system.id == "modular-geodesic" else "lebesgue")
            x0 = sample_measure(system, measure, 1, rng_for(args.seed, 1))[0]
            spec = qr_spectrum(system, x0, args.steps, args.seed)
            for lam, dim in spec.exponents:
                print(f"lambda = {lam:+.6f}  (multiplicity {dim})")
            print(f"chi+ = {chi_plus(spec):.6f}")
            if args.out:
                with open(args.out, "w") as fh:
                    fh.write(_dump({"exponents": spec.exponents, "chi_plus": chi_plus(spec),
                                    "residual": spec.residual, "n_steps": spec.n_steps, "seed": args.seed}))
            return EXIT_OK
        if args.command == "run":
            cfg = load_config(args.config)
            if args.seed is not None or args.out is not None:
                data = dict(cfg.raw)
                if args.seed is not None:
                    data["seed"] = args.seed
                if args.out is not None:
                    data["output"] = args.out
                cfg = parse_config(json.dumps(data), args.config)
            return execute(cfg)
        method = args.method if args.command == "entropy" else args.command
        cfg = _config_from_flags(args, method)
        code = execute(cfg)
        with open(os.path.join(cfg.output, "estimates.json")) as fh:
            stage = json.load(fh)["stages"][0]
        print(json.dumps(stage["result"] if stage["resolved"] else {"error": stage["error"]}, indent=2,
                         sort_keys=True)[:20000])
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
