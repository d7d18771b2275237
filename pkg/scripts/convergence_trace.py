"""Solve one seeded desk drop per scheme and print the objective per iteration."""

import argparse

from isac_ee import harness as H
from isac_ee.config import SolverSettings, SystemConfig, load_config
from isac_ee.optimizer import SCHEMES, solve_chain
from isac_ee.sysmodel import build_geometry


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="YAML scenario (default: desk preset)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--omega", type=float, help="override the sensing weight")
    args = ap.parse_args()
    if args.config:
        run = load_config(args.config)
        cfg, settings = run.system, run.solver
    else:
        cfg, settings = SystemConfig.desk(), SolverSettings()
    if args.omega is not None:
        cfg = cfg.replace(omega=args.omega)
    ch = H.drop_channels(cfg, args.seed, 0)
    out = solve_chain(cfg, ch, build_geometry(cfg), SCHEMES, settings, seed=(args.seed, 0))
    for name in SCHEMES:
        r = out[name]
        print(f"{name}: status={r.status} iterations={r.iterations} EE={r.report.objective:.6g}")
    print("iteration objective tau residual")
    for t in out["proposed"].trace:
        print(f"{t.iteration:4d} {t.objective:.8g} {t.tau:.3g} {t.residual:.2e}")


if __name__ == "__main__":
    main()
