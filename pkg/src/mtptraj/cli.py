"""Command-line front end.

Subcommands: ``estimate`` (trajectory pair + inference report on a CSV),
``simulate`` (replication study), ``truth`` (analytic benchmark means),
``contrast`` (dry-run inspection of a contrast matrix).  Every output
embeds the echoed configuration, its hash, and the seed, so identical
invocations reproduce identical files.  Exit codes: 0 success, 1
estimation or numerical failure, 2 invalid input.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .data import load_csv
from .errors import InputError, MtptrajError
from .inference import build_contrast, empirical_covariance, full_report
from .learners import (make_classification_learner, make_regression_learner,
                       parse_config_file)
from .mvn import MvnConfig
from .policy import parse_policy
from .sdr import SdrConfig, estimate_pair
from .simulation import (DgpParams, StudyGrid, analytic_truth, calibrated,
                         desk_scale_grid, run_study)
from . import plots

SCHEMA_VERSION = 1


def _config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def _json_dump(payload: dict, path: Path) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")


def _csv_with_provenance(frame: pd.DataFrame, path: Path, provenance: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# {provenance}\n")
        frame.to_csv(fh, index=False)


def _provenance(config: dict) -> str:
    return f"config_hash={_config_hash(config)} seed={config.get('seed')}"


def _mvn_config(args) -> MvnConfig:
    return MvnConfig(n_points=args.mvn_points, n_shifts=args.mvn_shifts,
                     target_se=args.mvn_se, seed=args.mvn_seed)


_LEARNER_KEYS = ("m_learner", "ratio_learner", "folds", "seed", "p_min",
                 "ratio_p_min", "boost_rounds", "boost_learning_rate")


def _sdr_config(args) -> SdrConfig:
    """Resolve learner settings: config file first, explicit flags win."""
    settings = {"m_learner": "stack", "ratio_learner": "stack", "folds": 5,
                "seed": 1, "p_min": 1e-3, "ratio_p_min": 1e-2,
                "boost_rounds": 200, "boost_learning_rate": 0.1}
    if getattr(args, "learner_config", None):
        file_conf = parse_config_file(args.learner_config)
        unknown = set(file_conf) - set(_LEARNER_KEYS)
        if unknown:
            raise InputError(f"unknown learner-config keys: {sorted(unknown)}")
        settings.update(file_conf)
    for key in ("m_learner", "ratio_learner", "folds", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    rounds = int(settings["boost_rounds"])
    lr = float(settings["boost_learning_rate"])
    m_learner = make_regression_learner(str(settings["m_learner"]), rounds=rounds,
                                        learning_rate=lr)
    ratio_learner = make_classification_learner(str(settings["ratio_learner"]),
                                                p_min=float(settings["p_min"]),
                                                rounds=rounds, learning_rate=lr)
    return SdrConfig(m_learner=m_learner, ratio_learner=ratio_learner,
                     folds=int(settings["folds"]), seed=int(settings["seed"]),
                     ratio_p_min=float(settings["ratio_p_min"]))


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_estimate(args) -> int:
    out = _outdir(args)
    config = {
        "subcommand": "estimate", "version": __version__,
        "input": str(args.input), "policy_prime": args.policy_prime,
        "policy_dprime": args.policy_dprime, "contrast": args.contrast,
        "alpha": args.alpha, "folds": args.folds if args.folds is not None else 5,
        "seed": args.seed if args.seed is not None else 1,
        "m_learner": args.m_learner, "ratio_learner": args.ratio_learner,
        "mvn": {"points": args.mvn_points, "shifts": args.mvn_shifts,
                "se": args.mvn_se, "seed": args.mvn_seed},
        "out": str(args.out),
    }
    provenance = _provenance({**config, "seed": config["seed"]})

    data = load_csv(args.input)
    policy_prime = parse_policy(args.policy_prime)
    policy_dprime = parse_policy(args.policy_dprime)
    sdr_config = _sdr_config(args)

    if args.contrast.startswith("file:"):
        matrix = np.loadtxt(args.contrast[len("file:"):], delimiter=",", ndmin=2)
        contrast = build_contrast("custom", data.tau, matrix)
    else:
        contrast = build_contrast(args.contrast, data.tau)

    diagnostics: dict = {}
    stacked = estimate_pair(data, policy_prime, policy_dprime, sdr_config,
                            diagnostics=diagnostics)
    report = full_report(stacked, contrast, alpha=args.alpha,
                         mvn_config=_mvn_config(args))

    tau = data.tau
    s_n = empirical_covariance(stacked).s_n
    se_all = np.sqrt(np.diag(s_n))

    payload = {
        "schema_version": SCHEMA_VERSION,
        "config": config,
        "config_hash": _config_hash(config),
        "seed": config["seed"],
        "policies": {"prime": stacked.label_prime, "dprime": stacked.label_dprime},
        "assessment_times": data.assessment_times.tolist(),
        "theta": {
            "prime": stacked.theta_hat[:tau].tolist(),
            "dprime": stacked.theta_hat[tau:].tolist(),
            "se_prime": se_all[:tau].tolist(),
            "se_dprime": se_all[tau:].tolist(),
        },
        "diagnostics": diagnostics,
        **report.to_dict(),
    }
    _json_dump(payload, out / "report.json")

    trajectory = pd.DataFrame({
        "t": np.arange(1, tau + 1),
        "v": data.assessment_times,
        "theta_prime": stacked.theta_hat[:tau],
        "se_prime": se_all[:tau],
        "theta_dprime": stacked.theta_hat[tau:],
        "se_dprime": se_all[tau:],
        "difference": stacked.theta_hat[tau:] - stacked.theta_hat[:tau],
    })
    _csv_with_provenance(trajectory, out / "trajectory.csv", provenance)

    locals_ = report.locals
    delta = pd.DataFrame({
        "j": [lt.j for lt in locals_],
        "estimate": [lt.estimate for lt in locals_],
        "se": [lt.se for lt in locals_],
        "t_stat": [lt.t for lt in locals_],
        "p_unadj": [lt.p_unadjusted for lt in locals_],
        "p_bonf": [lt.p_bonferroni for lt in locals_],
        "p_max": [lt.p_max for lt in locals_],
        "ci_pointwise_lo": [lt.ci_pointwise[0] for lt in locals_],
        "ci_pointwise_hi": [lt.ci_pointwise[1] for lt in locals_],
        "ci_bonf_lo": [lt.ci_bonferroni[0] for lt in locals_],
        "ci_bonf_hi": [lt.ci_bonferroni[1] for lt in locals_],
        "ci_max_lo": [lt.ci_max[0] for lt in locals_],
        "ci_max_hi": [lt.ci_max[1] for lt in locals_],
    })
    _csv_with_provenance(delta, out / "delta.csv", provenance)

    if args.dump_eif:
        names = ([f"prime_t{t}" for t in range(1, tau + 1)]
                 + [f"dprime_t{t}" for t in range(1, tau + 1)])
        _csv_with_provenance(pd.DataFrame(stacked.eif, columns=names),
                             out / "eif.csv", provenance)

    plots.render_estimate_figure(
        v=data.assessment_times,
        theta_prime=stacked.theta_hat[:tau], se_prime=se_all[:tau],
        theta_dprime=stacked.theta_hat[tau:], se_dprime=se_all[tau:],
        delta_j=[lt.j for lt in locals_],
        delta_hat=[lt.estimate for lt in locals_],
        ci_lo=[lt.ci_max[0] for lt in locals_],
        ci_hi=[lt.ci_max[1] for lt in locals_],
        labels=(stacked.label_prime, stacked.label_dprime),
        path_base=out / "figure_trajectory", provenance=provenance)
    print(f"estimate: wrote report.json, trajectory.csv, delta.csv, figures to {out}")
    return 0


def _parse_grid(spec: list[str]) -> StudyGrid:
    values: dict[str, str] = {}
    for item in spec:
        if "=" not in item:
            raise InputError(f"grid items look like key=value, got {item!r}")
        key, val = item.split("=", 1)
        values[key.strip()] = val.strip()
    missing = {"n", "beta", "reps"} - set(values)
    if missing:
        raise InputError(f"grid needs n=..., beta=..., reps=...; missing {sorted(missing)}")
    return StudyGrid(
        n_values=tuple(int(x) for x in values["n"].split(",")),
        beta_values=tuple(float(x) for x in values["beta"].split(",")),
        replicates=int(values["reps"]),
    )


def cmd_simulate(args) -> int:
    out = _outdir(args)
    if args.grid:
        grid = _parse_grid(args.grid)
    elif args.desk_scale:
        beta_values = (tuple(float(b) for b in args.beta.split(","))
                       if args.beta else (0.0, 0.5, 1.0))
        grid = desk_scale_grid(replicates=args.reps or 300, beta_values=beta_values)
    else:
        raise InputError("simulate needs --desk-scale or --grid n=... beta=... reps=...")

    config = {
        "subcommand": "simulate", "version": __version__,
        "grid": {"n_values": list(grid.n_values),
                 "beta_values": list(grid.beta_values),
                 "replicates": grid.replicates},
        "alpha": args.alpha, "seed": args.seed if args.seed is not None else 0,
        "m_learner": args.m_learner or "ols",
        "ratio_learner": args.ratio_learner or "logistic",
        "folds": args.folds if args.folds is not None else 5,
        "mvn": {"points": args.mvn_points, "shifts": args.mvn_shifts,
                "se": args.mvn_se, "seed": args.mvn_seed},
        "raw": bool(args.raw), "out": str(args.out),
    }
    provenance = _provenance(config)

    estimator = SdrConfig(
        m_learner=make_regression_learner(config["m_learner"]),
        ratio_learner=make_classification_learner(config["ratio_learner"]),
        folds=config["folds"])
    tables = run_study(grid, estimator=estimator, alpha=args.alpha,
                       seed=config["seed"], mvn_config=_mvn_config(args),
                       keep_raw=bool(args.raw), progress=args.progress)

    payload = {"config": config, "config_hash": _config_hash(config),
               **tables.to_dict()}
    _json_dump(payload, out / "study_tables.json")

    bias_rows = []
    power_rows = []
    simultaneous_rows = []
    for cell in tables.cells:
        for j in range(len(cell.delta_true)):
            bias_rows.append({"n": cell.n, "beta": cell.beta, "j": j + 2,
                              "delta_true": cell.delta_true[j],
                              "bias": cell.bias[j], "mcse": cell.bias_mcse[j]})
        for test, power in (("wald", cell.wald_power), ("max", cell.max_power)):
            power_rows.append({"n": cell.n, "beta": cell.beta, "test": test,
                               "power": power,
                               "mcse": float(np.sqrt(max(power * (1 - power), 0.0)
                                                     / max(cell.replicates, 1)))})
        for method in ("none", "bonferroni", "max"):
            simultaneous_rows.append({
                "n": cell.n, "beta": cell.beta, "method": method,
                "sim_power": cell.sim_power[method],
                "sim_coverage": cell.sim_coverage[method]})
    _csv_with_provenance(pd.DataFrame(bias_rows), out / "bias_vs_n.csv", provenance)
    _csv_with_provenance(pd.DataFrame(power_rows), out / "power_vs_beta.csv", provenance)
    _csv_with_provenance(pd.DataFrame(simultaneous_rows), out / "simultaneous.csv",
                         provenance)
    plots.render_study_figures(tables, out, provenance)
    print(f"simulate: wrote study_tables.json, plot CSVs, figures to {out}")
    return 0


def cmd_truth(args) -> int:
    params = calibrated(DgpParams(alpha=args.alpha_param, beta=args.beta))
    truth = analytic_truth(params)
    config = {"subcommand": "truth", "version": __version__,
              "alpha_param": args.alpha_param, "beta": args.beta,
              "seed": 0}
    payload = {
        "schema_version": SCHEMA_VERSION,
        "config": config,
        "config_hash": _config_hash(config),
        "seed": 0,
        "gamma": list(params.gamma),
        "assessment_times": list(params.v),
        **truth.to_dict(),
    }
    text = json.dumps(payload, sort_keys=True, indent=2)
    if args.out:
        out = _outdir(args)
        (out / "truth.json").write_text(text + "\n", encoding="utf-8")
        print(f"truth: wrote truth.json to {out}")
    else:
        print(text)
    return 0


def cmd_contrast(args) -> int:
    contrast = build_contrast(args.kind, args.tau)
    lines = [f"# {args.kind} contrast, tau={args.tau}, k={contrast.k}"]
    lines += [",".join(f"{x:g}" for x in row) for row in contrast.matrix]
    text = "\n".join(lines)
    if args.out:
        out = _outdir(args)
        (out / "contrast.csv").write_text(text + "\n", encoding="utf-8")
        print(f"contrast: wrote contrast.csv to {out}")
    else:
        print(text)
    return 0


def _add_mvn_flags(parser: argparse.ArgumentParser, points: int = 2 ** 15,
                   shifts: int = 12, se: float = 1e-4) -> None:
    parser.add_argument("--mvn-points", type=int, default=points,
                        help="lattice points per randomization")
    parser.add_argument("--mvn-shifts", type=int, default=shifts,
                        help="number of random shifts")
    parser.add_argument("--mvn-se", type=float, default=se,
                        help="target standard error for rectangle probabilities")
    parser.add_argument("--mvn-seed", type=int, default=20250809)


def _add_learner_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--m-learner", choices=["ols", "ols_quadratic", "boost", "stack"],
                        default=None, help="outcome-regression learner")
    parser.add_argument("--ratio-learner",
                        choices=["logistic", "logistic_quadratic", "boost", "stack"],
                        default=None, help="density-ratio classifier")
    parser.add_argument("--folds", type=int, default=None,
                        help="cross-fitting folds (1 = fit on all)")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--learner-config", type=str, default=None,
                        help="key = value file; explicit flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtptraj",
        description="Counterfactual outcome trajectories under modified "
                    "treatment policies: estimation, simultaneous inference, "
                    "and a replication study harness.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    est = sub.add_parser("estimate", help="estimate a policy pair and run inference")
    est.add_argument("--input", required=True, help="wide-format CSV")
    est.add_argument("--policy-prime", default="identity")
    est.add_argument("--policy-dprime", default="shift:-1")
    est.add_argument("--contrast", default="baseline",
                     help="baseline | adjacent | file:<csv with k x 2*tau matrix>")
    est.add_argument("--alpha", type=float, default=0.05)
    est.add_argument("--dump-eif", action="store_true",
                     help="also write the n x 2*tau influence matrix as eif.csv")
    est.add_argument("--out", required=True)
    _add_learner_flags(est)
    _add_mvn_flags(est)
    est.set_defaults(func=cmd_estimate)

    simp = sub.add_parser("simulate", help="run the replication study")
    simp.add_argument("--desk-scale", action="store_true",
                      help="preset: n in {250, 1000, 2500}, 300 replicates")
    simp.add_argument("--grid", nargs="*", default=None,
                      help="n=250,1000 beta=0,1 reps=10")
    simp.add_argument("--beta", type=str, default=None,
                      help="comma-separated beta values for --desk-scale")
    simp.add_argument("--reps", type=int, default=None,
                      help="replicates for --desk-scale")
    simp.add_argument("--alpha", type=float, default=0.05)
    simp.add_argument("--raw", action="store_true",
                      help="keep per-replicate raw records in study_tables.json")
    simp.add_argument("--progress", action="store_true")
    simp.add_argument("--out", required=True)
    _add_learner_flags(simp)
    # replication loops use a lighter integration budget by default
    _add_mvn_flags(simp, points=2 ** 12, shifts=8, se=5e-4)
    simp.set_defaults(func=cmd_simulate)

    tru = sub.add_parser("truth", help="analytic benchmark trajectories")
    tru.add_argument("--beta", type=float, default=0.0)
    tru.add_argument("--alpha-param", type=float, default=-2.0,
                     help="trajectory-gap parameter of the benchmark system")
    tru.add_argument("--out", default=None)
    tru.set_defaults(func=cmd_truth)

    con = sub.add_parser("contrast", help="inspect a contrast matrix")
    con.add_argument("--kind", choices=["baseline", "adjacent"], default="baseline")
    con.add_argument("--tau", type=int, required=True)
    con.add_argument("--out", default=None)
    con.set_defaults(func=cmd_contrast)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MtptrajError as exc:
        error = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(error, sort_keys=True), file=sys.stderr)
        return getattr(exc, "exit_code", 1)


if __name__ == "__main__":
    sys.exit(main())
