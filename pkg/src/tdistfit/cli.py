"""Command-line interface: ``simulate``, ``fit`` and ``noise-estimate``.

Exit codes: 0 success, 1 fit stopped at the iteration limit, 2 usage
error, 3 data error, 4 no constant regions found.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .accel import Scheme, accelerated_fit
from .estimators import AlgorithmKind, FitConfig, FitStatus
from .linalg import NotPositiveDefinite
from .model import StudentTParams, WeightedSample, sample
from .noise import (
    HomogeneityTestConfig,
    ImageFormatError,
    NoConstantRegions,
    estimate_noise,
    load_image,
    read_csv_matrix,
)

EXIT_OK = 0
EXIT_MAX_ITERS = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NO_REGIONS = 4

CSV_COLUMNS = [
    "seed",
    "trial",
    "algo",
    "scheme",
    "nu_true",
    "nu_hat",
    "iterations",
    "map_evals",
    "status",
    "seconds",
    "final_L",
]


# -- simulation harness ----------------------------------------------------------


def parse_algorithm(spec: str) -> tuple[AlgorithmKind, Scheme]:
    """Parse ``gmmf``, ``squarem-gmmf`` or ``daarem:mmf`` style names."""
    text = spec.strip().lower().replace(":", "-")
    if "-" in text:
        scheme, kind = text.split("-", 1)
        return AlgorithmKind.parse(kind), Scheme.parse(scheme)
    return AlgorithmKind.parse(text), Scheme.NONE


def algorithm_label(kind: AlgorithmKind, scheme: Scheme) -> str:
    return kind.value if scheme is Scheme.NONE else f"{scheme.value}-{kind.value}"


@dataclass
class SimulationSpec:
    d: int = 2
    n: int = 1000
    nu_list: list = field(default_factory=lambda: [1.0, 2.0, 5.0, 10.0, 100.0])
    sigma: np.ndarray | None = None  # defaults to sigma_scale * I
    sigma_scale: float = 1.0
    trials: int = 100
    algorithms: list = field(default_factory=lambda: [(k, Scheme.NONE) for k in AlgorithmKind])
    seed: int = 0
    fit_cfg: FitConfig = FitConfig()

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.n < self.d + 1:
            raise ValueError("n must be at least d + 1")
        if not self.nu_list:
            raise ValueError("need at least one nu value")

    def scatter(self) -> np.ndarray:
        if self.sigma is not None:
            return np.asarray(self.sigma, dtype=float)
        return self.sigma_scale * np.eye(self.d)


def trial_rng(seed: int, nu_index: int, trial: int) -> np.random.Generator:
    """Independent stream per (seed, nu, trial), regardless of scheduling."""
    return np.random.default_rng(np.random.SeedSequence([seed, nu_index, trial]))


def _run_trial(args):
    spec, nu_index, trial = args
    nu = float(spec.nu_list[nu_index])
    params = StudentTParams(nu, np.zeros(spec.d), spec.scatter())
    data = WeightedSample(sample(params, spec.n, trial_rng(spec.seed, nu_index, trial)))
    rows = []
    for kind, scheme in spec.algorithms:
        row = {
            "seed": spec.seed,
            "trial": trial,
            "algo": kind.value,
            "scheme": scheme.value,
            "nu_true": nu,
        }
        try:
            res = accelerated_fit(kind, scheme, data, spec.fit_cfg)
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            row.update(nu_hat=math.nan, iterations=0, map_evals=0, status=f"Error: {exc}", seconds=0.0, final_L=math.nan)
        else:
            row.update(
                nu_hat=float(res.params.nu),
                iterations=res.iterations,
                map_evals=res.map_evaluations,
                status=res.status.value,
                seconds=res.wall_time,
                final_L=res.final_objective,
            )
        rows.append(row)
    return rows


def run_simulation(spec: SimulationSpec, jobs: int = 1) -> list[dict]:
    """One row per (nu, trial, algorithm); order is independent of ``jobs``."""
    tasks = [(spec, i, t) for i in range(len(spec.nu_list)) for t in range(spec.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_trial, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        chunks = [_run_trial(t) for t in tasks]
    return [row for chunk in chunks for row in chunk]


def _mean_std(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def summarize(rows: list[dict]) -> dict:
    """Aggregate rows into table cells keyed by algorithm label and nu."""
    cells: dict = {}
    for row in rows:
        label = algorithm_label(AlgorithmKind.parse(row["algo"]), Scheme.parse(row["scheme"]))
        cell = cells.setdefault(label, {}).setdefault(repr(float(row["nu_true"])), [])
        cell.append(row)
    out = {}
    for label, by_nu in cells.items():
        out[label] = {}
        for nu_key, group in by_nu.items():
            it_m, it_s = _mean_std([r["iterations"] for r in group])
            ev_m, ev_s = _mean_std([r["map_evals"] for r in group])
            t_m, t_s = _mean_std([r["seconds"] for r in group])
            statuses: dict = {}
            for r in group:
                statuses[r["status"]] = statuses.get(r["status"], 0) + 1
            out[label][nu_key] = {
                "trials": len(group),
                "iterations_mean": it_m,
                "iterations_std": it_s,
                "map_evals_mean": ev_m,
                "map_evals_std": ev_s,
                "seconds_mean": t_m,
                "seconds_std": t_s,
                "status_counts": statuses,
                "nu_hat": [r["nu_hat"] for r in group],
            }
    return out


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


_INT_COLUMNS = {"seed", "trial", "iterations", "map_evals"}
_FLOAT_COLUMNS = {"nu_true", "nu_hat", "seconds", "final_L"}


def rows_from_csv(text: str) -> list[dict]:
    rows = []
    for raw in csv.DictReader(io.StringIO(text)):
        row = {}
        for k, v in raw.items():
            if k in _INT_COLUMNS:
                row[k] = int(v)
            elif k in _FLOAT_COLUMNS:
                row[k] = float(v)
            else:
                row[k] = v
        rows.append(row)
    return rows


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    return obj


# -- fit -----------------------------------------------------------------------------


def fit_result_to_dict(res, algorithm: str, scheme: str) -> dict:
    p = res.params
    out = {
        "algorithm": algorithm,
        "scheme": scheme,
        "status": res.status.value,
        "nu": p.nu,
        "mu": p.mu.tolist(),
        "sigma": p.sigma.entries.tolist(),
        "iterations": res.iterations,
        "map_evaluations": res.map_evaluations,
        "final_L": res.final_objective,
        "objective_trace": list(res.objective_trace),
        "wall_time": res.wall_time,
        "gaussian_sigma": None if res.gaussian_sigma is None else res.gaussian_sigma.entries.tolist(),
    }
    return _json_safe(out)


# -- argument handling -------------------------------------------------------------------


def _parse_matrix(text: str) -> np.ndarray:
    try:
        rows = [[float(c) for c in r.replace(",", " ").split()] for r in text.split(";")]
        return np.array(rows, dtype=float)
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse matrix {text!r}; use '1,0;0,1'") from None


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return v


def _algorithm_arg(text: str):
    try:
        return parse_algorithm(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _fit_options(p: argparse.ArgumentParser):
    p.add_argument("--tol", type=_positive_float, default=1e-5, help="stopping tolerance (default 1e-5)")
    p.add_argument("--nu0", type=_positive_float, default=3.0, help="initial degree of freedom (default 3)")
    p.add_argument("--max-iters", type=int, default=10000, help="outer iteration limit (default 10000)")
    p.add_argument("--nu-max", type=_positive_float, default=1e6, help="Gaussian-limit threshold (default 1e6)")


def _fit_config(args) -> FitConfig:
    return FitConfig(
        tol=args.tol,
        nu0=args.nu0,
        max_outer_iters=args.max_iters,
        nu_max=args.nu_max,
        fixed_nu=getattr(args, "fixed_nu", None),
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tdistfit",
        description="Maximum-likelihood estimation for the multivariate Student-t distribution.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="Monte Carlo benchmark of the estimators")
    sim.add_argument("--d", type=int, default=2, help="dimension (default 2)")
    sim.add_argument("--n", type=int, default=1000, help="samples per trial (default 1000)")
    sim.add_argument("--nu", type=_positive_float, nargs="+", default=[1.0, 2.0, 5.0, 10.0, 100.0])
    group = sim.add_mutually_exclusive_group()
    group.add_argument("--sigma-scale", type=_positive_float, default=1.0, help="scatter c*I (default 1)")
    group.add_argument("--sigma", type=_parse_matrix, help="explicit scatter, rows separated by ';'")
    sim.add_argument("--trials", type=int, default=100, help="trials per nu (default 100)")
    sim.add_argument(
        "--algorithms",
        type=_algorithm_arg,
        nargs="+",
        default=None,
        help="e.g. em aem mmf gmmf ecme squarem-gmmf daarem-mmf (default: all five, unaccelerated)",
    )
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    sim.add_argument("--output", help="output path prefix; writes PREFIX.csv and/or PREFIX.json")
    sim.add_argument("--format", choices=["csv", "json", "both"], default="both")
    _fit_options(sim)

    ft = sub.add_parser("fit", help="fit one dataset read from CSV")
    ft.add_argument("input", help="CSV file, one sample per row")
    ft.add_argument("--algorithm", default="gmmf", choices=[k.value for k in AlgorithmKind])
    ft.add_argument("--scheme", default="none", choices=[s.value for s in Scheme])
    ft.add_argument("--fixed-nu", type=_positive_float, default=None, help="estimate mu and Sigma only")
    ft.add_argument("--output", help="write JSON here instead of stdout")
    _fit_options(ft)

    ne = sub.add_parser("noise-estimate", help="estimate Student-t noise parameters of an image")
    ne.add_argument("image", help="PGM (P2/P5) or CSV image")
    ne.add_argument("--alpha", type=float, default=0.05, help="significance level (default 0.05)")
    ne.add_argument("--min-regions", type=int, default=20)
    ne.add_argument("--initial-block", type=int, default=64)
    ne.add_argument("--min-block", type=int, default=8)
    ne.add_argument("--output", help="write JSON here instead of stdout")
    _fit_options(ne)
    return parser


def _emit(text: str, path: str | None):
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_simulate(args) -> int:
    spec = SimulationSpec(
        d=args.d,
        n=args.n,
        nu_list=list(args.nu),
        sigma=args.sigma,
        sigma_scale=args.sigma_scale,
        trials=args.trials,
        algorithms=args.algorithms or [(k, Scheme.NONE) for k in AlgorithmKind],
        seed=args.seed,
        fit_cfg=_fit_config(args),
    )
    if spec.scatter().shape != (spec.d, spec.d):
        raise ValueError(f"scatter must be {spec.d}x{spec.d}")
    rows = run_simulation(spec, jobs=args.jobs)
    csv_text = rows_to_csv(rows)
    json_text = json.dumps(_json_safe({"spec": _spec_dict(spec), "cells": summarize(rows)}), indent=2) + "\n"
    if args.output:
        if args.format in ("csv", "both"):
            _emit(csv_text, args.output + ".csv")
        if args.format in ("json", "both"):
            _emit(json_text, args.output + ".json")
    else:
        _emit(json_text if args.format == "json" else csv_text, None)
    return EXIT_OK


def _spec_dict(spec: SimulationSpec) -> dict:
    return {
        "d": spec.d,
        "n": spec.n,
        "nu": [float(v) for v in spec.nu_list],
        "sigma": spec.scatter().tolist(),
        "trials": spec.trials,
        "algorithms": [algorithm_label(k, s) for k, s in spec.algorithms],
        "seed": spec.seed,
        "tol": spec.fit_cfg.tol,
    }


def cmd_fit(args) -> int:
    points = read_csv_matrix(args.input)
    data = WeightedSample(points)
    res = accelerated_fit(args.algorithm, args.scheme, data, _fit_config(args))
    _emit(json.dumps(fit_result_to_dict(res, args.algorithm, args.scheme), indent=2) + "\n", args.output)
    return EXIT_MAX_ITERS if res.status is FitStatus.MAX_ITERS else EXIT_OK


def cmd_noise_estimate(args) -> int:
    image = load_image(args.image)
    cfg = HomogeneityTestConfig(
        alpha_level=args.alpha,
        initial_block=args.initial_block,
        min_block=args.min_block,
        min_regions=args.min_regions,
    )
    report = estimate_noise(image, cfg, _fit_config(args))
    _emit(report.to_json(indent=2) + "\n", args.output)
    if report.degenerate:
        print("error: no block could be fitted (degenerate image?)", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    handlers = {"simulate": cmd_simulate, "fit": cmd_fit, "noise-estimate": cmd_noise_estimate}
    try:
        return handlers[args.command](args)
    except NoConstantRegions as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_REGIONS
    except (ImageFormatError, NotPositiveDefinite, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
