"""Command-line experiment harness.

``mpdo-approx <task> [--config PATH] [--seed N] [--out DIR] [--threads N]
[--format csv|json|both] [--set key=value ...]`` runs one task and writes
``<out>/<task>.csv`` and/or ``<out>/<task>.json``.  ``mpdo-approx plot``
renders a compress CSV as a small SVG chart.

Exit codes: 0 success, 1 every row failed, 2 configuration error,
3 resource cap exceeded, 4 invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from typing import Callable, Optional, Sequence

import numpy as np

from .config import FORMATS, TASKS, ConfigError, ExperimentConfig
from .errors import DomainError, InvariantViolation, MPDOError, ResourceError

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_RESOURCE, EXIT_INVARIANT = 0, 1, 2, 3, 4

COLUMNS = {
    "scan": ["cut", "alpha", "method", "value"],
    "truncate": ["cut", "D_p", "alpha", "eta", "eta_bound", "delta_measured", "delta_analytic",
                 "entropy", "min_eig"],
    "compress": ["D_p", "D", "K", "eta_max", "delta_max", "eps_measured", "eps_bound", "min_eig",
                 "wall_ms"],
    "eop": ["cut", "alpha", "value", "canonical_value", "gap", "restarts", "iterations", "converged"],
    "asymptotics": ["N", "c", "lambda", "kappa", "alpha", "kappa_min", "Delta", "log_D",
                    "log_bound", "bound", "log_finite_bound"],
    "bench": ["kernel", "n", "D", "backend", "seconds", "max_abs_diff"],
}


# -- state construction ------------------------------------------------------


def build_state(cfg: ExperimentConfig):
    from .models import GibbsSpec, HamiltonianSpec, gibbs_state, test_state
    from .operators import SiteChain

    st = cfg.section("state")
    chain = SiteChain(st["N"], st["d"])
    if st["source"] == "test":
        return test_state(st["kind"], chain, st["seed"])
    model = st["model"]
    keys = {"tfim": ("J", "g"), "xxz": ("J_xy", "J_z", "h"), "random": ("strength",)}
    if model not in keys:
        raise ConfigError(f"state.model must be one of {sorted(keys)}, got {model!r}")
    params = {k: cfg["model." + k] for k in keys[model]}
    if model == "random":
        params["seed"] = st["seed"]
    return gibbs_state(GibbsSpec(HamiltonianSpec(chain, model, params), st["beta"]))


# -- tasks -------------------------------------------------------------------


def _status_row(base: dict, exc: Exception) -> dict:
    return {**base, "status": f"error:{type(exc).__name__}"}


def _map_rows(fn: Callable, jobs: list, threads: int) -> list:
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))  # results keep job order


def task_scan(cfg, rho):
    from .entanglement import arealaw_scan

    scale = 1.0 / math.log(2.0) if cfg["output.bits"] else 1.0
    jobs = [(a, m) for a in cfg["scan.alphas"] for m in cfg["scan.methods"]]

    def one(job):
        a, m = job
        try:
            prof = arealaw_scan(rho, a, m, cfg["scan.restarts"], cfg["scan.max_iters"], cfg["seed"])
        except (DomainError, ResourceError) as exc:
            return [_status_row({"cut": "", "alpha": a, "method": m, "value": ""}, exc)], None
        rows = [{**r, "value": r["value"] * scale, "status": "ok"} for r in prof.rows()]
        return rows, {"alpha": a, "method": m, "e_max": prof.e_max * scale}

    out = _map_rows(one, jobs, cfg["runtime.threads"])
    return [r for rows, _ in out for r in rows], {"profiles": [d for _, d in out if d]}


def task_truncate(cfg, rho):
    from .entanglement import purification_entanglement
    from .purification import canonical_purification, eta_bound, max_schmidt_rank, truncate_cut

    psi = canonical_purification(rho)
    rows = []
    for k in range(1, rho.chain.n_sites):
        for dp in cfg["truncate.dps"]:
            base = {"cut": k, "D_p": dp}
            if dp > max_schmidt_rank(rho.chain, k):
                for a in cfg["truncate.alphas"]:
                    rows.append({**base, "alpha": a, "status": "skipped:D_p>rank"})
                continue
            t = truncate_cut(rho, k, dp, psi)
            lo = float(np.linalg.eigvalsh(t.sigma)[0])
            for a in cfg["truncate.alphas"]:
                e = purification_entanglement(psi, k, a)
                rows.append({**base, "alpha": a, "eta": t.eta, "eta_bound": eta_bound(e, a, dp),
                             "delta_measured": t.delta_measured, "delta_analytic": t.delta_analytic,
                             "entropy": e, "min_eig": lo, "status": "ok"})
    return rows, {}


def task_compress(cfg, rho):
    from .compressor import compress

    c = cfg.section("compress")
    out_dir = cfg["output.dir"]

    def one(dp):
        try:
            mpdo, rep = compress(rho, dp, c["strategy"], c["mode"], c["alpha"], cfg["seed"],
                                 c["dual_tolerance"], c["max_iters"])
        except (DomainError, ResourceError) as exc:
            return _status_row({"D_p": dp}, exc), None
        if c["write_mpdo"]:
            os.makedirs(out_dir, exist_ok=True)
            with open(os.path.join(out_dir, f"mpdo_Dp{dp}.txt"), "w", encoding="utf-8") as fh:
                mpdo.write(fh)
        status = "ok" if rep.within_bound else "bound_violated"
        return {**rep.row(), "status": status}, rep

    out = _map_rows(one, list(c["dps"]), cfg["runtime.threads"])
    reports = [r for _, r in out if r is not None]
    details = {"reports": [r.to_dict() for r in reports]}
    violated = c["mode"] == "auerbach" and any(not r.within_bound for r in reports)
    return [row for row, _ in out], details, violated


def task_eop(cfg, rho):
    from .entanglement import eop_estimate

    cuts = cfg["eop.cuts"] or tuple(range(1, rho.chain.n_sites))
    jobs = [(k, a) for k in cuts for a in cfg["eop.alphas"]]

    def one(job):
        k, a = job
        try:
            est = eop_estimate(rho, k, a, cfg["eop.restarts"], cfg["eop.max_iters"], cfg["seed"],
                               cfg["eop.cap"])
        except ResourceError:
            raise
        except DomainError as exc:
            return _status_row({"cut": k, "alpha": a}, exc)
        return {"cut": k, "alpha": a, "value": est.value, "canonical_value": est.canonical_value,
                "gap": est.gap_to_canonical, "restarts": est.restarts, "iterations": est.iterations,
                "converged": est.converged, "status": "ok"}

    return _map_rows(one, jobs, cfg["runtime.threads"]), {}


def task_asymptotics(cfg, _rho=None):
    from .compressor import asymptotic_params

    a = cfg.section("asymptotics")
    rows = [{**asymptotic_params(2.0**e, a["c"], a["lambda"], a["kappa"]).row(), "status": "ok"}
            for e in range(a["log2n_min"], a["log2n_max"] + 1)]
    decreasing = all(r2["log_bound"] < r1["log_bound"] for r1, r2 in zip(rows, rows[1:]))
    return rows, {"strictly_decreasing": decreasing}


def task_bench(cfg, _rho=None):
    from .benchmark import run_benchmark

    rows = run_benchmark(cfg["bench.sizes"], cfg["bench.repeats"], cfg["seed"])
    return [{**r, "status": "ok"} for r in rows], {}


# -- output ------------------------------------------------------------------


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def csv_text(task: str, rows: list[dict], config_hash: str, timings: bool = True) -> str:
    cols = COLUMNS[task] + ["status", "config_hash"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        r = dict(r, config_hash=config_hash)
        if not timings:
            r = {k: ("" if k in ("wall_ms", "seconds") else v) for k, v in r.items()}
        w.writerow([_cell(r.get(c, "")) for c in cols])
    return buf.getvalue()


def json_text(task: str, rows: list[dict], details: dict, cfg: ExperimentConfig,
              timestamp: Optional[str] = None) -> str:
    header = {"task": task, "config_hash": cfg.digest(), "config": cfg.dumps(),
              "timestamp": timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds")}
    if not cfg["output.timings"]:
        rows = [{k: v for k, v in r.items() if k not in ("wall_ms", "seconds")} for r in rows]
        details = _strip_timings(details)
    doc = {"header": header, "rows": rows, "details": details}
    return json.dumps(_jsonable(doc), indent=1, sort_keys=True) + "\n"


def _strip_timings(obj):
    if isinstance(obj, dict):
        return {k: _strip_timings(v) for k, v in obj.items() if k not in ("timings_ms", "wall_ms")}
    if isinstance(obj, list):
        return [_strip_timings(v) for v in obj]
    return obj


def write_outputs(task, rows, details, cfg) -> list[str]:
    out_dir = cfg["output.dir"]
    os.makedirs(out_dir, exist_ok=True)
    fmt = cfg["output.format"]
    paths = []
    if fmt in ("csv", "both"):
        p = os.path.join(out_dir, f"{task}.csv")
        with open(p, "w", encoding="utf-8", newline="") as fh:
            fh.write(csv_text(task, rows, cfg.digest(), cfg["output.timings"]))
        paths.append(p)
    if fmt in ("json", "both"):
        p = os.path.join(out_dir, f"{task}.json")
        with open(p, "w", encoding="utf-8") as fh:
            fh.write(json_text(task, rows, details, cfg))
        paths.append(p)
    return paths


# -- svg ---------------------------------------------------------------------


def svg_chart(xs: Sequence[float], ys: Sequence[float], bound: Optional[Sequence[float]] = None,
              title: str = "eps vs D_p", width: int = 480, height: int = 320) -> str:
    """Minimal log-scale line chart of ``ys`` (and optionally ``bound``) against ``xs``."""
    series = [("eps_measured", ys, "#1f77b4")]
    if bound is not None:
        series.append(("eps_bound", bound, "#d62728"))
    vals = [v for _, s, _ in series for v in s if v > 0 and math.isfinite(v)]
    if not xs or not vals:
        raise DomainError("nothing positive to plot")
    lo, hi = math.log10(min(vals)), math.log10(max(vals))
    if hi - lo < 1e-12:
        lo, hi = lo - 1, hi + 1
    x0, x1 = min(xs), max(xs)
    span = (x1 - x0) or 1.0
    pad = 40

    def px(x):
        return pad + (x - x0) / span * (width - 2 * pad)

    def py(y):
        return height - pad - (math.log10(y) - lo) / (hi - lo) * (height - 2 * pad)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>']
    for x in xs:
        parts.append(f'<text x="{px(x):.1f}" y="{height - pad + 15}" text-anchor="middle" '
                     f'font-size="10">{x:g}</text>')
    for e in range(math.floor(lo), math.ceil(hi) + 1):
        if lo <= e <= hi:
            parts.append(f'<text x="{pad - 5}" y="{py(10.0**e):.1f}" text-anchor="end" '
                         f'font-size="10">1e{e}</text>')
    for name, s, color in series:
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs, s) if y > 0)
        parts.append(f'<polyline fill="none" stroke="{color}" points="{pts}"/>')
        parts.append(f'<text x="{width - pad}" y="{pad + 15 * len(parts) % 60:.0f}" fill="{color}" '
                     f'text-anchor="end" font-size="10">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def plot_csv(path: str, out: str) -> None:
    with open(path, encoding="utf-8") as fh:
        rows = [r for r in csv.DictReader(fh) if r.get("status") == "ok"]
    xs = [float(r["D_p"]) for r in rows]
    ys = [float(r["eps_measured"]) for r in rows]
    bs = [float(r["eps_bound"]) for r in rows]
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(svg_chart(xs, ys, bs))


# -- entry point -------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpdo-approx", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="task", required=True)
    for t in TASKS:
        s = sub.add_parser(t, help=f"run the {t} task")
        s.add_argument("--config", help="config file (key = value lines)")
        s.add_argument("--seed", type=int, help="global seed")
        s.add_argument("--out", help="output directory")
        s.add_argument("--threads", type=int, help="worker threads for independent rows")
        s.add_argument("--format", choices=FORMATS, help="output format")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        s.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
    pl = sub.add_parser("plot", help="render a compress CSV as an SVG chart")
    pl.add_argument("input")
    pl.add_argument("--output", default="eps.svg")
    return p


def resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig({})
    items = {"task": args.task}
    for kv in args.set:
        if "=" not in kv:
            raise ConfigError(f"--set expects KEY=VALUE, got {kv!r}")
        k, v = (s.strip() for s in kv.split("=", 1))
        items[k] = v
    for flag, key in (("seed", "seed"), ("out", "output.dir"), ("threads", "runtime.threads"),
                      ("format", "output.format")):
        val = getattr(args, flag)
        if val is not None:
            items[key] = val
    return cfg.with_items(items)


TASK_FUNCS = {"scan": task_scan, "truncate": task_truncate, "compress": task_compress,
              "eop": task_eop, "asymptotics": task_asymptotics, "bench": task_bench}


def run(cfg: ExperimentConfig) -> int:
    """Run the configured task and write its outputs; returns the exit code."""
    task = cfg["task"]
    try:
        rho = build_state(cfg) if task not in ("asymptotics", "bench") else None
        res = TASK_FUNCS[task](cfg, rho)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceError as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except DomainError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    rows, details = res[0], res[1]
    violated = len(res) > 2 and res[2]
    for p in write_outputs(task, rows, details, cfg):
        print(p)
    if violated:
        print("invariant violation: measured error above the certified bound", file=sys.stderr)
        return EXIT_INVARIANT
    if rows and all(str(r.get("status", "ok")).startswith("error") for r in rows):
        errs = {r["status"] for r in rows}
        if any("ResourceError" in e for e in errs):
            return EXIT_RESOURCE
        return EXIT_FAILED
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    if args.task == "plot":
        try:
            plot_csv(args.input, args.output)
        except (OSError, KeyError, ValueError, MPDOError) as exc:
            print(f"plot failed: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(args.output)
        return EXIT_OK
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceError as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    if args.dump_config:
        sys.stdout.write(cfg.dumps())
        return EXIT_OK
    return run(cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
