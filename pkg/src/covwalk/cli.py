"""Command-line experiment runner.

Exit codes: 0 success, 2 configuration/validation problem, 3 runtime failure.
All files are written atomically (temp file + rename) so interrupted runs
never leave half-written artifacts.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from importlib import metadata

import numpy as np

from . import config as config_mod
from . import cover as cover_mod
from . import fuchsian
from . import hyp2
from . import stats as stats_mod
from . import walk as walk_mod


def _version() -> str:
    try:
        return metadata.version("covwalk")
    except metadata.PackageNotFoundError:
        return "0.0.0+local"


def _atomic_write(path: str, data: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-covwalk-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _records_csv(results, d: int) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    header = (
        ["traj", "n"]
        + [f"k{i+1}" for i in range(d)]
        + [f"drift{i+1}" for i in range(d)]
        + ["cusp_height", "cartan_t"]
    )
    w.writerow(header)
    for res in results:
        for r in res.records:
            w.writerow(
                [r.traj, repr(r.n) if isinstance(r.n, float) else r.n]
                + list(r.index)
                + [repr(v) for v in r.drift]
                + [repr(r.cusp_height), repr(r.cartan_t)]
            )
    return out.getvalue()


def _records_jsonl(results) -> str:
    lines = []
    for res in results:
        for r in res.records:
            h = r.cusp_height if math.isfinite(r.cusp_height) else None
            lines.append(
                json.dumps(
                    {
                        "traj": r.traj,
                        "n": r.n,
                        "index": list(r.index),
                        "drift": list(r.drift),
                        "cusp_height": h,
                        "cartan_t": r.cartan_t,
                    },
                    separators=(",", ":"),
                )
            )
    return "\n".join(lines) + "\n"


def _summary(bundle, results, extra: dict) -> dict:
    cfg = bundle.config
    drifts = np.array([r.summary.terminal_drift for r in results])
    summary = {
        "build": {"package": "covwalk", "version": _version()},
        "config_hash": config_mod.config_hash(cfg),
        "config": config_mod.canonical_text(cfg),
        "d": bundle.spec.d,
        "dim_EC": bundle.spec.dim_EC,
        "unfolded": list(bundle.spec.unfolded),
        "v": [list(v) for v in bundle.spec.v],
        "trajectories": len(results),
        "steps": cfg.steps,
        "mode": cfg.mode,
        "drift_mean": [float(v) for v in drifts.mean(axis=0)],
        "drift_abs_median": [
            float(v) for v in np.median(np.abs(drifts), axis=0)
        ],
    }
    summary.update(extra)
    return summary


def _analysis(bundle, results) -> dict:
    cfg = bundle.config
    out: dict = {}
    reports = set(cfg.reports)
    if "drift" in reports or not reports:
        target = None
        if (
            cfg.start == "special"
            and bundle.measure is not None
            and bundle.measure.kind == "atoms"
        ):
            target = stats_mod.exact_finite_orbit_target(
                bundle.system, bundle.measure, hyp2.BASE_TANGENT
            )
        ds = stats_mod.drift_summary(results, target=target)
        out["drift"] = {
            "mean": list(ds.mean),
            "target": None if ds.target is None else list(ds.target),
            "max_dev_from_target": ds.max_dev_from_target,
        }
    if "cauchy" in reports:
        t_norm = cfg.steps * cfg.dt if cfg.mode == "geodesic" else cfg.steps
        basis = bundle.spec.E_C_basis or tuple(
            tuple(1 if i == j else 0 for i in range(bundle.spec.d))
            for j in range(bundle.spec.d)
        )
        fits = []
        for vec in basis:
            norm = math.sqrt(sum(v * v for v in vec))
            samples = [
                sum(v * k for v, k in zip(vec, r.summary.final_index)) / (norm * t_norm)
                for r in results
            ]
            f = stats_mod.cauchy_fit(samples)
            fits.append(
                {
                    "basis_vector": list(vec),
                    "location": f.location,
                    "scale": f.scale,
                    "ks": f.ks_distance,
                    "tail_index": f.tail_index,
                }
            )
        out["cauchy"] = fits
    if "gaussian" in reports:
        t_norm = cfg.steps * cfg.dt if cfg.mode == "geodesic" else cfg.steps
        rt = math.sqrt(t_norm)
        fits = []
        for j in range(bundle.spec.d):
            samples = [r.summary.final_index[j] / rt for r in results]
            f = stats_mod.gaussian_fit(samples)
            fits.append(
                {"component": j, "mean": f.mean, "sd": f.sd, "ks": f.ks_distance}
            )
        out["gaussian"] = fits
    if "recurrence" in reports:
        rep = stats_mod.recurrence_report(
            results, bundle.spec.d, bundle.spec.dim_EC
        )
        out["recurrence"] = {
            "grid": list(rep.grid),
            "return_fraction": list(rep.return_fraction),
            "window_fraction": list(rep.window_fraction),
            "median_first_return": rep.median_first_return,
            "median_max_excursion": list(rep.median_max_excursion),
            "verdict_hint": rep.verdict_hint + " (statistical indicator, not a proof)",
        }
    if "accumulation" in reports:
        series = {
            r.summary.traj: [(rec.n, rec.drift) for rec in r.records]
            for r in results
        }
        thr = 0.1
        rep = stats_mod.accumulation_diagnostic(
            series,
            bundle.spec.E_C_basis,
            bundle.spec.d,
            span_threshold=thr,
            complement_threshold=thr,
        )
        out["accumulation"] = {
            "span_threshold": rep.span_threshold,
            "complement_threshold": rep.complement_threshold,
            "frac_span_above": rep.frac_span_above,
            "frac_complement_below": rep.frac_complement_below,
            "median_total_range": float(np.median(rep.total_range)),
        }
    return out


# ---------------------------------------------------------------------------
# commands

def cmd_lattice_check(args) -> int:
    name = args.lattice
    weights: dict[str, tuple[int, ...]] | None = None
    try:
        if name in ("gamma2", "punctured_square_torus"):
            pres, polygon, cusps = fuchsian.builtin_lattice(name)
        else:
            with open(name, "r", encoding="utf-8") as fh:
                pres, weights = fuchsian.parse_lattice_text(fh.read())
            pres.validate()
            polygon = fuchsian.dirichlet_domain(
                pres, hyp2.PointH(0.05, 1.3), args.word_bound
            )
            cusps = fuchsian.derive_cusps(polygon, pres)
    except FileNotFoundError:
        print(f"error: no such preset or file: {name}", file=sys.stderr)
        return 2
    except (fuchsian.PresentationError, fuchsian.LatticeFileError,
            fuchsian.AreaMismatchError, fuchsian.EllipticCenterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    print(f"lattice: {name}")
    for lab, g in pres.generators:
        cl = hyp2.classify(g)
        extra = (
            f" length {cl.translation_length:.6f}"
            if cl.kind == "hyperbolic"
            else ""
        )
        print(f"  generator {lab}: {cl.kind}{extra}")
    print(f"  relators: {len(pres.relators)} (all evaluate to the identity)")
    chi = pres.euler_characteristic()
    expected = 2 * math.pi * abs(chi)
    print(
        f"  polygon: {len(polygon.sides)} sides, area {polygon.area:.9f}"
        f" (Gauss-Bonnet 2*pi*|chi| = {expected:.9f})"
    )
    print(f"  cusps: {len(cusps)}")
    for j, c in enumerate(cusps):
        fp = "inf" if math.isinf(c.fixed_point) else f"{c.fixed_point:.6f}"
        print(
            f"    cusp {j}: fixed point {fp}, width {c.width:.6f},"
            f" loop {fuchsian.word_str(c.parabolic_word)}"
        )

    trials: list[dict[str, tuple[int, ...]]] = []
    if weights:
        trials.append(weights)
    else:
        labels = pres.labels
        for j in range(len(labels)):
            trials.append(
                {lab: ((1,) if i == j else (0,)) for i, lab in enumerate(labels)}
            )
    code = 0
    for w in trials:
        desc = ", ".join(f"{k}={' '.join(map(str, v))}" for k, v in sorted(w.items()))
        try:
            spec = cover_mod.validate_cover(pres, cusps, w)
            print(
                f"  weights {desc}: v = {list(spec.v)},"
                f" unfolded = {list(spec.unfolded)}, dim E_C = {spec.dim_EC}"
            )
        except (cover_mod.RelatorNotKilledError, cover_mod.QuotientNotFreeRankError) as exc:
            print(f"  weights {desc}: INVALID ({exc})")
            code = 2
    return code


def _load_bundle(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        cfg = config_mod.parse_config_text(fh.read())
    return config_mod.build_bundle(cfg)


def cmd_run(args, geodesic: bool) -> int:
    try:
        bundle = _load_bundle(args.config)
        cfg = bundle.config
        if geodesic and cfg.mode != "geodesic":
            raise config_mod.ConfigError("config mode must be 'geodesic'")
        if not geodesic and cfg.mode != "walk":
            raise config_mod.ConfigError("config mode must be 'walk'")
        wcfg = config_mod.walk_config(cfg)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (config_mod.ConfigError, fuchsian.PresentationError,
            fuchsian.LatticeFileError, fuchsian.AreaMismatchError,
            cover_mod.RelatorNotKilledError,
            cover_mod.QuotientNotFreeRankError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        results = walk_mod.run_trajectories(
            bundle.system, bundle.measure, wcfg, geodesic=geodesic
        )
        analysis = _analysis(bundle, results)
    except (fuchsian.NonTerminationError, walk_mod.ZariskiCheckError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    outdir = args.out or "."
    summary = _summary(bundle, results, {"analysis": analysis})
    _atomic_write(os.path.join(outdir, "records.csv"), _records_csv(results, bundle.spec.d))
    _atomic_write(os.path.join(outdir, "records.jsonl"), _records_jsonl(results))
    _atomic_write(
        os.path.join(outdir, "summary.json"), json.dumps(summary, indent=2) + "\n"
    )
    print(f"wrote records.csv, records.jsonl, summary.json to {outdir}")
    for key, val in analysis.items():
        print(f"{key}: {json.dumps(val)}")
    return 0


def cmd_lyapunov(args) -> int:
    try:
        bundle = _load_bundle(args.config)
        if bundle.measure is None:
            raise config_mod.ConfigError("lyapunov needs a walk measure")
    except (config_mod.ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        est = walk_mod.lyapunov_estimate(
            bundle.measure,
            steps=bundle.config.steps,
            trajectories=bundle.config.trajectories,
            master_seed=bundle.config.seed,
            override_zariski=args.override_zariski,
        )
    except walk_mod.ZariskiCheckError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    print(f"lyapunov = {est.value!r} se = {est.se!r} "
          f"(n = {est.steps}, K = {est.trajectories})")
    if args.out:
        _atomic_write(
            os.path.join(args.out, "lyapunov.json"),
            json.dumps(
                {
                    "lyapunov": est.value,
                    "se": est.se,
                    "steps": est.steps,
                    "trajectories": est.trajectories,
                    "config_hash": config_mod.config_hash(bundle.config),
                },
                indent=2,
            )
            + "\n",
        )
    return 0


def _read_samples(path: str, column: str | None) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        fh.seek(0)
        try:
            float(first.split(",")[0])
            has_header = False
        except ValueError:
            has_header = True
        if has_header:
            rows = list(csv.DictReader(fh))
            col = column or ("drift1" if "drift1" in rows[0] else None)
            if col is None or col not in rows[0]:
                raise ValueError(
                    f"column {column!r} not found; available: {list(rows[0])}"
                )
            # terminal checkpoint per trajectory when the file has many rows
            if "traj" in rows[0] and "n" in rows[0]:
                last: dict[str, dict] = {}
                for r in rows:
                    prev = last.get(r["traj"])
                    if prev is None or float(r["n"]) > float(prev["n"]):
                        last[r["traj"]] = r
                rows = list(last.values())
            return np.array([float(r[col]) for r in rows])
        return np.loadtxt(fh, ndmin=1)


def cmd_fit(args) -> int:
    try:
        samples = _read_samples(args.infile, args.column)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.law == "cauchy":
            f = stats_mod.cauchy_fit(samples)
            print(
                f"cauchy fit: location {f.location!r} scale {f.scale!r} "
                f"ks {f.ks_distance!r} tail_index {f.tail_index!r} n {f.n}"
            )
        else:
            f = stats_mod.gaussian_fit(samples)
            print(
                f"gaussian fit: mean {f.mean!r} sd {f.sd!r} "
                f"ks {f.ks_distance!r} n {f.n}"
            )
    except stats_mod.DegenerateSamplesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def cmd_recurrence(args) -> int:
    try:
        bundle = _load_bundle(args.config)
        cfg = bundle.config
        if cfg.return_radius is None:
            raise config_mod.ConfigError(
                "recurrence needs return_radius (and return_grid) in [walk]"
            )
        wcfg = config_mod.walk_config(cfg)
    except (config_mod.ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        results = walk_mod.run_trajectories(
            bundle.system, bundle.measure, wcfg, geodesic=cfg.mode == "geodesic"
        )
        rep = stats_mod.recurrence_report(results, bundle.spec.d, bundle.spec.dim_EC)
    except (fuchsian.NonTerminationError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    print(f"d = {rep.d}, dim E_C = {rep.dim_EC}: expected {rep.verdict_hint}")
    for i, n in enumerate(rep.grid):
        print(
            f"  n <= {n}: return fraction {rep.return_fraction[i]:.4f},"
            f" window fraction {rep.window_fraction[i]:.4f},"
            f" median max excursion {rep.median_max_excursion[i]:.1f}"
        )
    print(f"  median first return: {rep.median_first_return}")
    if args.out:
        _atomic_write(
            os.path.join(args.out, "recurrence.json"),
            json.dumps(
                {
                    "config_hash": config_mod.config_hash(cfg),
                    "d": rep.d,
                    "dim_EC": rep.dim_EC,
                    "verdict_hint": rep.verdict_hint,
                    "grid": list(rep.grid),
                    "return_fraction": list(rep.return_fraction),
                    "window_fraction": list(rep.window_fraction),
                    "median_first_return": rep.median_first_return,
                    "median_max_excursion": list(rep.median_max_excursion),
                },
                indent=2,
            )
            + "\n",
        )
    return 0


def cmd_report(args) -> int:
    import glob

    paths = sorted(glob.glob(os.path.join(args.dir, "**", "*.json"), recursive=True))
    summaries = []
    for p in paths:
        try:
            with open(p, "r", encoding="utf-8") as fh:
                data = json.load(fh)
            summaries.append((p, data))
        except (OSError, json.JSONDecodeError):
            continue
    if not summaries:
        print(f"error: no JSON summaries under {args.dir}", file=sys.stderr)
        return 2
    lines = [f"covwalk report over {len(summaries)} summaries", ""]
    for p, data in summaries:
        lines.append(f"== {os.path.relpath(p, args.dir)}")
        for key in ("config_hash", "mode", "steps", "trajectories",
                    "drift_mean", "lyapunov", "verdict_hint"):
            if key in data:
                lines.append(f"   {key}: {data[key]}")
        for key, val in (data.get("analysis") or {}).items():
            lines.append(f"   {key}: {json.dumps(val)}")
        lines.append("")
    text = "\n".join(lines)
    print(text)
    _atomic_write(os.path.join(args.dir, "dashboard.txt"), text + "\n")

    # gnuplot-ready drift ECDFs next to each records.csv
    for p, _ in summaries:
        d = os.path.dirname(p)
        csv_path = os.path.join(d, "records.csv")
        if not os.path.exists(csv_path):
            continue
        try:
            samples = _read_samples(csv_path, None)
        except ValueError:
            continue
        samples = np.sort(samples)
        ecdf = np.arange(1, len(samples) + 1) / len(samples)
        body = "# terminal drift (column 1) vs empirical CDF (column 2)\n"
        body += "\n".join(
            f"{float(x)!r} {float(e)!r}" for x, e in zip(samples, ecdf)
        )
        _atomic_write(os.path.join(d, "drift_ecdf.dat"), body + "\n")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="covwalk",
        description="random walks and geodesic flow on Z^d-covers of "
        "finite-area hyperbolic surfaces",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_lat = sub.add_parser("lattice", help="lattice utilities")
    lat_sub = p_lat.add_subparsers(dest="subcommand", required=True)
    p_check = lat_sub.add_parser("check", help="validate a preset or lattice file")
    p_check.add_argument("lattice")
    p_check.add_argument("--word-bound", type=int, default=12)
    p_check.set_defaults(func=cmd_lattice_check)

    p_walk = sub.add_parser("walk", help="random walk runs")
    walk_sub = p_walk.add_subparsers(dest="subcommand", required=True)
    p_wrun = walk_sub.add_parser("run")
    p_wrun.add_argument("--config", required=True)
    p_wrun.add_argument("--out", default=None)
    p_wrun.set_defaults(func=lambda a: cmd_run(a, geodesic=False))

    p_geo = sub.add_parser("geodesic", help="geodesic flow runs")
    geo_sub = p_geo.add_subparsers(dest="subcommand", required=True)
    p_grun = geo_sub.add_parser("run")
    p_grun.add_argument("--config", required=True)
    p_grun.add_argument("--out", default=None)
    p_grun.set_defaults(func=lambda a: cmd_run(a, geodesic=True))

    p_ly = sub.add_parser("lyapunov", help="top Lyapunov exponent of the measure")
    p_ly.add_argument("--config", required=True)
    p_ly.add_argument("--out", default=None)
    p_ly.add_argument("--override-zariski", action="store_true")
    p_ly.set_defaults(func=cmd_lyapunov)

    p_fit = sub.add_parser("fit", help="fit a limit law to samples")
    p_fit.add_argument("law", choices=["cauchy", "gaussian"])
    p_fit.add_argument("--in", dest="infile", required=True)
    p_fit.add_argument("--column", default=None)
    p_fit.set_defaults(func=cmd_fit)

    p_rec = sub.add_parser("recurrence", help="return statistics of a walk")
    p_rec.add_argument("--config", required=True)
    p_rec.add_argument("--out", default=None)
    p_rec.set_defaults(func=cmd_recurrence)

    p_rep = sub.add_parser("report", help="collate JSON summaries in a directory")
    p_rep.add_argument("--dir", required=True)
    p_rep.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
