"""Run the five desk-scale trend sweeps and print paired-mean summaries.

Writes one CSV per sweep into --out and a text summary with, for each swept
value, the proposed scheme's mean EE over drops usable at every value.
"""

import argparse
import logging
import time
from pathlib import Path

from isac_ee import harness as H
from isac_ee.config import SystemConfig, dbm_to_mw
from isac_ee.optimizer import SCHEMES

SWEEPS = {
    "se_threshold": ("se_threshold", [4, 5, 6, 7, 8], dict(omega=2e-3)),
    "omega": ("omega", [1e-4, 2e-4, 5e-4, 1e-3, 2e-3], {}),
    "n_antennas": ("n_antennas", [9, 16, 25], dict(omega=1e-4)),
    "q_subcarriers": ("q_subcarriers", [2, 4, 8], dict(omega=1e-4)),
    "crb0_db": ("crb0_db", [-45, -40, -35, -30, -25], dict(omega=1e-4, p_max=dbm_to_mw(30.0))),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results", help="output directory")
    ap.add_argument("--drops", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--only", nargs="*", choices=sorted(SWEEPS), help="subset of sweeps")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for name in args.only or SWEEPS:
        param, values, kw = SWEEPS[name]
        spec = H.SweepSpec(param, values, SCHEMES, args.drops, SystemConfig.desk(**kw), seed=args.seed)
        t0 = time.perf_counter()
        rows = H.run_sweep(spec, workers=args.workers)
        H.write_sweep_csv(rows, out / f"sweep_{name}.csv", spec)
        lines.append(f"== {name} ({time.perf_counter() - t0:.0f} s)")
        for scheme in SCHEMES:
            vals, ee, n = H.paired_means(rows, scheme, "ee_overall")
            _, eec, _ = H.paired_means(rows, scheme, "ee_c")
            cells = "  ".join(f"{v:g}:{e:.4f}/{c:.4f}" for v, e, c in zip(vals, ee, eec))
            lines.append(f"{scheme:>9} [{n} common drops] EE/EE_c  {cells}")
        print("\n".join(lines[-(len(SCHEMES) + 1):]), flush=True)
    (out / "summary.txt").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
