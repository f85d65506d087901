"""Command-line interface: fit, plan, evaluate, and parameter sweeps.

Subcommands write JSON/CSV artifacts suitable for offline plotting.  Every
run is deterministic given its arguments: randomness flows from --seed
(falling back to a fixed package constant, never the clock), and outputs
are written atomically so a failure leaves no partial files.
"""

import argparse
import dataclasses
import sys
from concurrent.futures import ThreadPoolExecutor

from . import DEFAULT_SEED
from .evaluation import (DEFAULT_TRIALS, SCHEMES, evaluate_plan,
                         fit_for_scenario, run_scheme)
from .fading import fit_logistic, generate_regression_samples
from .files import (db_to_linear, load_model, load_result, load_scenario,
                    model_from_json, model_to_json, plan_from_json,
                    save_json, save_model, scenario_to_config, write_outputs)
from .planner import LOS_MODEL

SWEEP_PARAMS = ("T", "vz", "eps", "kmax_db")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="uavrice",
        description="Plan and evaluate data-collection missions over "
                    "angle-dependent Rician fading links.")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser(
        "fit", help="fit the logistic effective-power model and save it")
    fit.add_argument("--kmin-db", type=float, default=0.0,
                     help="Rician factor at zenith-less geometry, dB")
    fit.add_argument("--kmax-db", type=float, default=30.0,
                     help="Rician factor directly overhead, dB")
    fit.add_argument("--eps", type=float, default=0.01,
                     help="target outage probability")
    fit.add_argument("--grid", type=int, default=200,
                     help="number of regression sample points")
    fit.add_argument("--out", required=True, help="model JSON output path")

    plan = sub.add_parser(
        "plan", help="design a mission with one of the benchmark schemes")
    plan.add_argument("--scenario", required=True,
                      help="scenario JSON input path")
    plan.add_argument("--model",
                      help="fitted model JSON (default: fit internally)")
    plan.add_argument("--scheme", required=True, choices=SCHEMES)
    plan.add_argument("--out", required=True, help="result JSON output path")
    plan.add_argument("--traj", help="optional trajectory CSV output path")
    plan.add_argument("--seed", type=int, default=DEFAULT_SEED)

    ev = sub.add_parser(
        "evaluate", help="Monte-Carlo outage check of a planned mission")
    ev.add_argument("--scenario", required=True)
    ev.add_argument("--plan", required=True,
                    help="result JSON produced by the plan subcommand")
    ev.add_argument("--trials", type=int, default=DEFAULT_TRIALS)
    ev.add_argument("--seed", type=int, default=DEFAULT_SEED)
    ev.add_argument("--out", required=True, help="result JSON output path")
    ev.add_argument("--traj", help="optional trajectory CSV output path")

    sweep = sub.add_parser(
        "sweep", help="re-plan over a parameter range, one row per value")
    sweep.add_argument("--scenario", required=True)
    sweep.add_argument("--model",
                       help="fitted model JSON (default: fit internally; "
                            "eps/kmax_db sweeps always refit per value)")
    sweep.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    sweep.add_argument("--values", required=True,
                       help="comma-separated parameter values")
    sweep.add_argument("--out", required=True, help="sweep JSON output path")
    sweep.add_argument("--seed", type=int, default=DEFAULT_SEED)

    return parser


def _resolve_model(scenario, scheme, model_path):
    if scheme == "lb":
        return LOS_MODEL
    if model_path is not None:
        return load_model(model_path)
    return fit_for_scenario(scenario)


def _cmd_fit(args):
    if args.kmin_db > args.kmax_db:
        raise ValueError("--kmin-db must not exceed --kmax-db")
    samples = generate_regression_samples(
        db_to_linear(args.kmin_db), db_to_linear(args.kmax_db),
        args.eps, args.grid)
    model = fit_logistic(samples)
    save_model(args.out, model)
    print(f"fit: rmse={model.rmse:.6f} b1={model.b1:.6f} "
          f"b2={model.b2:.6f} -> {args.out}")
    return 0


def _cmd_plan(args):
    scenario = load_scenario(args.scenario)
    model = _resolve_model(scenario, args.scheme, args.model)
    plan, report = run_scheme(args.scheme, scenario, model,
                              seed=args.seed, simulate=False)
    write_outputs(plan, report, scenario, model,
                  result_path=args.out, traj_path=args.traj)
    print(f"plan {args.scheme}: eta_estimated={report.eta_estimated:.6f} "
          f"eta_achieved={report.eta_achieved:.6f} -> {args.out}")
    return 0


def _cmd_evaluate(args):
    scenario = load_scenario(args.scenario)
    doc = load_result(args.plan)
    plan = plan_from_json(doc["plan"])
    model = model_from_json(doc["model"])
    if plan.a.shape != (scenario.n_sn, scenario.n_slots):
        raise ValueError(
            f"plan was made for {plan.a.shape[0]} nodes x "
            f"{plan.a.shape[1]} slots; scenario has {scenario.n_sn} x "
            f"{scenario.n_slots}")
    report = evaluate_plan(plan, scenario, model, scheme=doc["scheme"],
                           seed=args.seed, trials=args.trials,
                           extras=doc["extras"])
    write_outputs(plan, report, scenario, model, result_path=args.out,
                  traj_path=args.traj, kind="evaluation")
    worst = float(report.outage_freq.max()) if report.outage_freq.size else 0.0
    print(f"evaluate {doc['scheme']}: "
          f"eta_estimated={report.eta_estimated:.6f} "
          f"eta_achieved={report.eta_achieved:.6f} "
          f"max_outage={worst:.5f} -> {args.out}")
    return 0


def _sweep_scenario(scenario, param, value):
    """Scenario with one parameter replaced; slot length stays fixed."""
    if param == "T":
        n_slots = int(round(value / scenario.delta_s))
        return dataclasses.replace(scenario, duration_s=float(value),
                                   n_slots=n_slots)
    if param == "vz":
        return dataclasses.replace(scenario, vz=float(value))
    if param == "eps":
        return dataclasses.replace(scenario, epsilon=float(value))
    return dataclasses.replace(scenario, k_max=db_to_linear(value))


def _sweep_row(scenario, param, value, base_model, seed):
    scen = _sweep_scenario(scenario, param, value)
    # eps and kmax_db change the fading law itself, so the surrogate must
    # be refit for each value; T and vz leave the channel untouched.
    if param in ("eps", "kmax_db") or base_model is None:
        model = fit_for_scenario(scen)
    else:
        model = base_model
    row = {"value": float(value), "model": model_to_json(model)}
    for scheme in ("rfb", "lb"):
        used = LOS_MODEL if scheme == "lb" else model
        plan, report = run_scheme(scheme, scen, used,
                                  seed=seed, simulate=False)
        row[scheme] = {
            "eta_estimated": report.eta_estimated,
            "eta_achieved": report.eta_achieved,
            "z_max_m": float(plan.z.max()),
            "z_mean_m": float(plan.z.mean()),
        }
    return row


def _cmd_sweep(args):
    scenario = load_scenario(args.scenario)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ValueError(f"--values: expected comma-separated numbers, "
                         f"got {args.values!r}") from None
    if not values:
        raise ValueError("--values: at least one value required")
    base_model = load_model(args.model) if args.model else None
    if args.param not in ("eps", "kmax_db") and base_model is None:
        base_model = fit_for_scenario(scenario)

    # Each value is an independent re-plan (no warm start), so the rows
    # can be computed concurrently and gathered in submission order.
    with ThreadPoolExecutor(max_workers=min(4, len(values))) as pool:
        futures = [pool.submit(_sweep_row, scenario, args.param, v,
                               base_model, args.seed)
                   for v in values]
        rows = [f.result() for f in futures]

    doc = {
        "kind": "sweep",
        "param": args.param,
        "seed": args.seed,
        "scenario": scenario_to_config(scenario),
        "rows": rows,
    }
    save_json(args.out, doc)
    for row in rows:
        print(f"sweep {args.param}={row['value']:g}: "
              f"rfb={row['rfb']['eta_achieved']:.6f} "
              f"lb={row['lb']['eta_achieved']:.6f}")
    print(f"-> {args.out}")
    return 0


_COMMANDS = {"fit": _cmd_fit, "plan": _cmd_plan,
             "evaluate": _cmd_evaluate, "sweep": _cmd_sweep}


def cli(argv):
    """Run one subcommand; return the process exit status."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:
        print(f"uavrice: error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
