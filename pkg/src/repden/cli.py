"""Batch command-line entry points: train, fit, simulate, evaluate.

Exit codes: 0 success (possibly with per-item errors), 1 usage error,
2 I/O or parse error, 3 total numerical failure.  Every command is
deterministic given its inputs, flags, and seed; worker threads only change
scheduling, never output content or order.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .estimators import FitFailedError, FitResult, fit_blup, fit_map, fit_mle, select_k_aic
from .expfam import FamilyModel, density, train_family
from .grid import Domain, GridFn
from .logscale import (
    ScaledModel,
    clamp_log_obs,
    density_original_scale,
    fit_original_scale,
    fit_scaled,
)
from .metrics import LooRefitError, loo_cross_entropy, return_level
from .modelio import (
    ModelFormatError,
    SampleFormatError,
    load_model,
    read_samples_csv,
    save_model,
    write_density_csv,
    write_samples_csv,
)
from .presmooth import KdeConfig, SubpopSample, silverman_bandwidth, weighted_kde
from .simgen import SCENARIO_KINDS, default_spec
from .simulate import run_scenario

THREADS_ENV = "REPDEN_THREADS"

FAMILY_METHODS = ("mle", "map", "blup")


class UsageError(Exception):
    pass


class TotalNumericalFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_domain(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise UsageError(f"--domain expects 'lo,hi', got {text!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError:
        raise UsageError(f"--domain expects numbers, got {text!r}")
    if hi <= lo:
        raise UsageError(f"--domain needs hi > lo, got {text!r}")
    return lo, hi


def _parse_size(text: str) -> int | tuple[int, int]:
    if ":" in text:
        lo, hi = text.split(":", 1)
        return (int(lo), int(hi))
    return int(text)


def _parse_float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x]


def _resolve_threads(value: int | None) -> int:
    if value is not None:
        return max(1, value)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}")
    return os.cpu_count() or 1


def _emit(payload: dict) -> None:
    json.dump(payload, sys.stdout, indent=1)
    sys.stdout.write("\n")


def _float_or_none(x):
    return None if x is None or not math.isfinite(x) else float(x)


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    samples = read_samples_csv(args.input)
    min_size = max(args.min_train_size, 2)
    usable = [s for s in samples if s.size >= min_size]
    excluded = len(samples) - len(usable)
    if len(usable) < 2:
        raise UsageError(
            f"need at least 2 usable subpopulations, got {len(usable)} "
            f"(threshold {min_size})"
        )
    bandwidth = None if args.bandwidth == "auto" else float(args.bandwidth)

    if args.log_scale:
        scaled = fit_scaled(
            usable,
            k_max=args.k_max,
            delta=args.delta,
            bandwidth=bandwidth,
            n_grid=args.grid,
        )
        model = scaled.inner
    else:
        if args.domain is None:
            raise UsageError("--domain lo,hi is required unless --log-scale is set")
        lo, hi = _parse_domain(args.domain)
        domain = Domain(lo, hi, args.grid)
        for s in usable:
            if not domain.contains(s.obs):
                raise UsageError(
                    f"subpopulation {s.id!r} has observations outside the declared domain"
                )
        model = train_family(usable, domain, args.k_max, bandwidth=bandwidth)

    model.meta.timestamp = datetime.now(timezone.utc).isoformat()
    save_model(model, args.out)
    _emit(
        {
            "command": "train",
            "n_used": len(usable),
            "n_excluded": excluded,
            "n_components": model.n_components,
            "eigenvalues": model.sys.eigvals.tolist(),
            "bandwidth": model.meta.bandwidth,
            "log_scale": model.meta.log_scale,
            "model": str(args.out),
        }
    )
    return 0


# ---------------------------------------------------------------------------
# fit


def _load_any_model(path) -> tuple[FamilyModel, ScaledModel | None]:
    model = load_model(path)
    if model.meta.log_scale:
        return model, ScaledModel(inner=model, delta=model.meta.delta or 0.5)
    return model, None


def _fit_one(model: FamilyModel, scaled: ScaledModel | None, sample: SubpopSample,
             method: str, k: int | None, k_max: int) -> tuple[FitResult, GridFn]:
    if scaled is not None:
        result = fit_original_scale(scaled, sample.obs, method=method, k=k, k_max=k_max)
        dens = density_original_scale(scaled, result.theta)
    else:
        if k is None:
            result = select_k_aic(model, sample.obs, method, k_max)
        else:
            fitter = {"mle": fit_mle, "map": fit_map, "blup": fit_blup}[method]
            result = fitter(model, sample.obs, k)
        dens = density(model, result.theta)
    return result, dens


def _result_payload(sample: SubpopSample, result: FitResult) -> dict:
    return {
        "id": sample.id,
        "status": "ok",
        "method": result.method,
        "n_obs": result.n_obs,
        "k": result.k,
        "theta": result.theta.tolist(),
        "xi": result.xi.tolist(),
        "log_normalizer": result.log_normalizer,
        "loglik": result.loglik,
        "aic": result.aic,
        "aic_trace": [[k, a] for k, a in result.aic_trace],
    }


def cmd_fit(args) -> int:
    model, scaled = _load_any_model(args.model)
    samples = read_samples_csv(args.input)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    method = args.method.lower()
    if method not in FAMILY_METHODS:
        raise UsageError(f"--method must be one of {FAMILY_METHODS}, got {args.method!r}")
    k = None if args.k == "aic" else int(args.k)
    k_max = min(args.k_max or model.n_components, model.n_components)
    if k is not None and not 1 <= k <= model.n_components:
        raise UsageError(f"--k must be in [1, {model.n_components}], got {k}")
    threads = _resolve_threads(args.threads)

    def one(sample: SubpopSample) -> dict:
        try:
            result, dens = _fit_one(model, scaled, sample, method, k, k_max)
        except Exception as exc:
            return {"id": sample.id, "status": "error", "error": str(exc)}
        write_density_csv(out_dir / f"density_{sample.id}.csv", dens)
        return _result_payload(sample, result)

    if threads <= 1:
        results = [one(s) for s in samples]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, samples))

    n_failed = sum(1 for r in results if r["status"] == "error")
    payload = {
        "command": "fit",
        "method": method,
        "k": args.k,
        "n_fitted": len(results) - n_failed,
        "n_failed": n_failed,
        "results": results,
    }
    with open(out_dir / "fits.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")
    _emit({k: v for k, v in payload.items() if k != "results"} | {"out": str(out_dir)})
    if results and n_failed == len(results):
        raise TotalNumericalFailure("every subpopulation failed to fit")
    return 0


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    if args.scenario not in SCENARIO_KINDS:
        raise UsageError(
            f"--scenario must be one of {SCENARIO_KINDS}, got {args.scenario!r}"
        )
    overrides = {}
    if args.n_train is not None:
        overrides["n_train"] = args.n_train
    if args.train_size is not None:
        overrides["train_size"] = _parse_size(args.train_size)
    if args.n_test is not None:
        overrides["n_test"] = args.n_test
    if args.test_size is not None:
        overrides["test_size"] = _parse_size(args.test_size)
    spec = default_spec(args.scenario, args.seed, **overrides)
    bandwidth = None if args.bandwidth == "auto" else float(args.bandwidth)
    threads = _resolve_threads(args.threads)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    outcomes = run_scenario(
        spec,
        reps=args.reps,
        k_max=args.k_max,
        n_grid=args.grid,
        bandwidth=bandwidth,
        threads=threads,
        keep_data=True,
    )

    methods = list(outcomes[0].mkl)
    for out in outcomes:
        rep_dir = out_dir / "reps" / f"rep_{out.rep:04d}"
        rep_dir.mkdir(parents=True, exist_ok=True)
        write_samples_csv(rep_dir / "train.csv", out.train)
        write_samples_csv(rep_dir / "test.csv", [s for s, _ in out.test])
        with open(rep_dir / "truths.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("subpop_id,t,density\n")
            for sample, truth in out.test:
                for t, v in zip(truth.domain.grid, truth.values):
                    fh.write(f"{sample.id},{float(t)!r},{float(v)!r}\n")

    with open(out_dir / "mkl_per_rep.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("rep,method,mkl\n")
        for out in outcomes:
            for m in methods:
                fh.write(f"{out.rep},{m},{out.mkl[m]!r}\n")

    summary = {}
    with open(out_dir / "mkl_summary.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("method,mean,median,sd\n")
        for m in methods:
            vals = np.array([out.mkl[m] for out in outcomes])
            sd = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
            summary[m] = {
                "mean": float(vals.mean()),
                "median": float(np.median(vals)),
                "sd": sd,
            }
            fh.write(f"{m},{summary[m]['mean']!r},{summary[m]['median']!r},{sd!r}\n")

    _emit(
        {
            "command": "simulate",
            "scenario": args.scenario,
            "seed": args.seed,
            "reps": args.reps,
            "mkl": summary,
            "out": str(out_dir),
        }
    )
    return 0


# ---------------------------------------------------------------------------
# evaluate


def _strata_label(size: int, breaks: list[float]) -> str:
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        if lo < size <= hi:
            return f"({lo:g},{hi:g}]"
    return f"({breaks[-1]:g},inf]"


def _loo_fit_fn(model, scaled, method, k, k_max, full_sample: SubpopSample):
    """Refit callback for one subpopulation; evaluates in the data's scale."""
    if method == "kde":
        domain = model.domain
        if scaled is not None:
            h = silverman_bandwidth(SubpopSample(id=full_sample.id,
                                                 obs=np.log(full_sample.obs)))
        else:
            h = silverman_bandwidth(full_sample)
        cfg = KdeConfig(bandwidth=h)

        def fit_kde(subset: np.ndarray) -> GridFn:
            if scaled is not None:
                x = clamp_log_obs(scaled, subset)
                xdens = weighted_kde(SubpopSample(id="loo", obs=x), cfg, domain)
                y = np.exp(domain.grid)
                ydom = Domain(y[0], y[-1], domain.n_grid * 4)
                vals = np.interp(np.log(ydom.grid), domain.grid, xdens.values) / ydom.grid
                return GridFn(ydom, vals / (ydom.trap_weights @ vals))
            return weighted_kde(SubpopSample(id="loo", obs=subset), cfg, domain)

        return fit_kde

    def fit_family(subset: np.ndarray) -> GridFn:
        if scaled is not None:
            result = fit_original_scale(scaled, subset, method=method, k=k, k_max=k_max)
            return density_original_scale(scaled, result.theta)
        if k is None:
            result = select_k_aic(model, subset, method, k_max)
        else:
            fitter = {"mle": fit_mle, "map": fit_map, "blup": fit_blup}[method]
            result = fitter(model, subset, k)
        return density(model, result.theta)

    return fit_family


def cmd_evaluate(args) -> int:
    model, scaled = _load_any_model(args.model)
    samples = read_samples_csv(args.input)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    methods = [m.strip().lower() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in FAMILY_METHODS + ("kde",):
            raise UsageError(f"unknown method {m!r} in --methods")
    k = None if args.k == "aic" else int(args.k)
    k_max = min(args.k_max or model.n_components, model.n_components)
    breaks = _parse_float_list(args.strata) if args.strata else [0.0, 10.0, 35.0, 75.0]
    levels = _parse_float_list(args.return_levels) if args.return_levels else []
    threads = _resolve_threads(args.threads)

    rows = []

    def evaluate_sample(sample: SubpopSample) -> list[dict]:
        out = []
        for method in methods:
            entry = {
                "id": sample.id,
                "size": sample.size,
                "stratum": _strata_label(sample.size, breaks),
                "method": method,
            }
            if args.loo:
                try:
                    ce = loo_cross_entropy(
                        _loo_fit_fn(model, scaled, method, k, k_max, sample), sample.obs
                    )
                    entry["loo_ce"] = ce
                except (LooRefitError, ValueError, FitFailedError) as exc:
                    entry["loo_ce"] = None
                    entry["error"] = str(exc)
            if levels and method != "kde":
                try:
                    result, dens = _fit_one(model, scaled, sample, method, k, k_max)
                    entry["return_levels"] = {
                        f"{t:g}": return_level(dens, t) for t in levels
                    }
                except Exception as exc:
                    entry["return_levels"] = None
                    entry.setdefault("error", str(exc))
            out.append(entry)
        return out

    if threads <= 1:
        per_sample = [evaluate_sample(s) for s in samples]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_sample = list(pool.map(evaluate_sample, samples))
    for group in per_sample:
        rows.extend(group)

    if args.loo:
        with open(out_dir / "loo_per_sample.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("subpop_id,size,stratum,method,loo_ce,finite\n")
            for r in rows:
                ce = r.get("loo_ce")
                finite = ce is not None and math.isfinite(ce)
                text = repr(float(ce)) if finite else ""
                fh.write(
                    f"{r['id']},{r['size']},\"{r['stratum']}\",{r['method']},{text},{int(finite)}\n"
                )

    if levels:
        with open(out_dir / "return_levels.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("subpop_id,method,t_years,level\n")
            for r in rows:
                rl = r.get("return_levels")
                if not rl:
                    continue
                for t, lvl in rl.items():
                    fh.write(f"{r['id']},{r['method']},{t},{lvl!r}\n")

    summary = {"command": "evaluate", "strata": []}
    labels = [f"({a:g},{b:g}]" for a, b in zip(breaks[:-1], breaks[1:])]
    labels.append(f"({breaks[-1]:g},inf]")
    for label in labels:
        block = {"stratum": label, "methods": {}}
        for method in methods:
            vals = [
                r.get("loo_ce")
                for r in rows
                if r["stratum"] == label and r["method"] == method and "loo_ce" in r
            ]
            finite = [v for v in vals if v is not None and math.isfinite(v)]
            if not vals:
                continue
            arr = np.array(finite)
            block["methods"][method] = {
                "n": len(vals),
                "n_finite": len(finite),
                "mean": _float_or_none(arr.mean()) if finite else None,
                "median": _float_or_none(float(np.median(arr))) if finite else None,
                "sd": (
                    _float_or_none(float(np.std(arr, ddof=1)))
                    if len(finite) > 1
                    else (0.0 if finite else None)
                ),
            }
        if block["methods"]:
            summary["strata"].append(block)
    with open(out_dir / "loo_summary.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=1)
        fh.write("\n")
    _emit(summary | {"out": str(out_dir)})
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    parser = _Parser(prog="repden", description=__doc__)
    parser.add_argument("--version", action="version", version=f"repden {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a family from a sample CSV")
    p.add_argument("input", help="sample CSV (header: subpop_id,value)")
    p.add_argument("--out", required=True, help="model file to write (JSON)")
    p.add_argument("--domain", help="comma-separated lo,hi of the support")
    p.add_argument("--grid", type=int, default=512, help="grid size (default 512)")
    p.add_argument("--k-max", type=int, default=10, help="components to retain (default 10)")
    p.add_argument("--bandwidth", default="auto", help="KDE bandwidth or 'auto' (median rule)")
    p.add_argument("--min-train-size", type=int, default=2,
                   help="exclude subpopulations smaller than this (default 2)")
    p.add_argument("--log-scale", action="store_true",
                   help="train on log responses (positive data only)")
    p.add_argument("--delta", type=float, default=0.5,
                   help="domain pad for --log-scale (default 0.5)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fit", help="fit new subpopulations within a trained model")
    p.add_argument("model", help="model file from 'train'")
    p.add_argument("input", help="sample CSV to fit")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--method", default="mle", help="mle, map, or blup (default mle)")
    p.add_argument("--k", default="aic", help="fixed component count or 'aic' (default)")
    p.add_argument("--k-max", type=int, default=None, help="cap for the AIC sweep")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default: {THREADS_ENV} or all cores)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="run a seeded benchmark scenario")
    p.add_argument("--scenario", required=True, help="one of " + ", ".join(SCENARIO_KINDS))
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--n-train", type=int, default=None)
    p.add_argument("--train-size", default=None, help="integer or inclusive lo:hi range")
    p.add_argument("--n-test", type=int, default=None)
    p.add_argument("--test-size", default=None, help="integer or inclusive lo:hi range")
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--grid", type=int, default=512)
    p.add_argument("--bandwidth", default="auto")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="score fits without knowing the truths")
    p.add_argument("model", help="model file from 'train'")
    p.add_argument("input", help="sample CSV to evaluate")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--loo", action="store_true", help="leave-one-out cross-entropy")
    p.add_argument("--return-levels", default=None,
                   help="comma-separated return periods in years, e.g. 5,10,20,30")
    p.add_argument("--strata", default=None,
                   help="comma-separated size breaks (default 0,10,35,75)")
    p.add_argument("--methods", default="mle,map,blup,kde")
    p.add_argument("--k", default="aic")
    p.add_argument("--k-max", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (OSError, SampleFormatError, ModelFormatError, json.JSONDecodeError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    except TotalNumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
