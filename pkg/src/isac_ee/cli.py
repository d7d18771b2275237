"""Command-line entry point: ``isac-ee {validate,solve,sweep}``.

Exit codes: 0 success, 1 validation failure, 2 usage or configuration error,
3 infeasible scenario.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional

import yaml

from . import harness
from .config import ConfigError, RunConfig, SystemConfig, load_config, sweep_values
from .optimizer import SCHEMES

EXIT_OK, EXIT_VALIDATION, EXIT_USAGE, EXIT_INFEASIBLE = 0, 1, 2, 3


def _load(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig(system=SystemConfig.desk())
    return load_config(path)


def _section(run: RunConfig, name: str) -> dict:
    sec = run.raw.get(name, {}) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"'{name}' section must be a mapping")
    return sec


def cmd_validate(args) -> int:
    run = _load(args.config)
    sec = _section(run, "validation")
    tol = dict(sec.get("tolerances", {}) or {})
    if args.tolerances:
        try:
            extra = yaml.safe_load(Path(args.tolerances).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read tolerance file {args.tolerances}: {exc}") from exc
        if not isinstance(extra, dict):
            raise ConfigError("tolerance file must be a mapping")
        tol.update(extra.get("tolerances", extra))
    tol = {k: float(v) for k, v in tol.items()}
    reports = harness.run_validation(
        run.system, tol, n_instances=int(sec.get("n_instances", 50)),
        mc_samples=int(sec.get("mc_samples", 10_000)), seed=args.seed,
    )
    out = Path(args.out or "validation.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    harness.write_validation_csv(reports, out)
    failed = [r for r in reports if not r.passed]
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.quantity}: rel_error={r.rel_error:.3g} "
              f"tol={r.tolerance:.3g}")
    if failed:
        print("failing checks: " + ", ".join(r.quantity for r in failed), file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_solve(args) -> int:
    run = _load(args.config)
    res = harness.solve_one(run.system, args.scheme, args.seed, run.solver)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{args.scheme}_seed{args.seed}"
    res.write_trace(out / f"trace_{stem}.csv")
    harness.write_rows(out / f"report_{stem}.csv", harness.REPORT_COLUMNS,
                       [harness.report_row(res, args.seed)])
    rep = res.report
    print(f"{args.scheme}: status={res.status} iterations={res.iterations} "
          f"EE={rep.objective:.6g} EE_c={rep.ee_c:.6g} EE_s={rep.ee_s:.6g}")
    if res.status == "infeasible":
        why = "; ".join(res.notes) if res.notes else _failing(rep, run.system)
        print(f"infeasible scenario: {why}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def _failing(rep, cfg: SystemConfig) -> str:
    names = []
    if not rep.se_ok:
        names.append(f"se_threshold={cfg.se_threshold:g} bps/Hz")
    if not rep.crb_theta_ok:
        names.append(f"crb0_theta={cfg.crb0_theta:g}")
    if not rep.crb_phi_ok:
        names.append(f"crb0_phi={cfg.crb0_phi:g}")
    if not rep.power_ok:
        names.append(f"p_max={cfg.p_max:g} mW")
    return "failing threshold(s): " + (", ".join(names) or "unknown")


def cmd_sweep(args) -> int:
    run = _load(args.config)
    sec = _section(run, "sweep")
    param = args.param or sec.get("param")
    if param is None:
        raise ConfigError("sweep parameter missing (--param or sweep.param)")
    values = sweep_values(args.values) if args.values else sweep_values(sec.get("values", []))
    schemes = tuple(args.schemes.split(",")) if args.schemes else tuple(sec.get("schemes", SCHEMES))
    n_drops = args.drops if args.drops is not None else int(sec.get("n_drops", 10))
    spec = harness.SweepSpec(param=param, values=values, schemes=schemes, n_drops=n_drops,
                             base=run.system, out=args.out, seed=args.seed)
    rows = harness.run_sweep(spec, run.solver, workers=args.workers, progress=args.verbose)
    out = Path(args.out or f"sweep_{param}.csv")
    harness.write_sweep_csv(rows, out, spec)
    for m in (r for r in rows if r["drop"] == "mean"):
        print(f"{m['scheme']:>9} {param}={m['value']:g}: EE={m['ee_overall']:.6g} "
              f"({m['status']})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="isac-ee", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--config", help="YAML scenario file (default: built-in desk preset)")
        sp.add_argument("--seed", type=int, default=0, help="root seed")
        sp.add_argument("--out", help=out_help)

    v = sub.add_parser("validate", help="run the oracle suite")
    common(v, "validation CSV path")
    v.add_argument("--tolerances", help="YAML mapping overriding check tolerances")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("solve", help="solve one seeded drop")
    common(s, "output directory for the trace and report CSVs")
    s.add_argument("--scheme", choices=SCHEMES, default="proposed")
    s.set_defaults(func=cmd_solve)

    w = sub.add_parser("sweep", help="parameter sweep over seeded drops")
    common(w, "sweep CSV path")
    w.add_argument("--param", choices=harness.SWEEP_PARAMS)
    w.add_argument("--values", help="comma-separated swept values")
    w.add_argument("--schemes", help=f"comma-separated subset of {','.join(SCHEMES)}")
    w.add_argument("--drops", type=int, help="channel drops per swept value")
    w.add_argument("--workers", type=int, default=1, help="worker processes")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
