"""Run the three regime sweeps and write CSV/JSON/SVG reports."""
import argparse
import time

from perfhom.harness import SweepPlan, emit_report, run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/sweeps")
    ap.add_argument("--ns", default="2,4,8", help="comma list of cells per side")
    ap.add_argument("--regimes", default="M_pos,M_zero,M_neg")
    args = ap.parse_args()
    ns = tuple(int(n) for n in args.ns.split(","))
    for regime in args.regimes.split(","):
        t0 = time.perf_counter()
        report = run_sweep(SweepPlan(regime=regime, ns=ns))
        for p in emit_report(report, args.out):
            print(p)
        for r in report.rows:
            if r["k"] == 1:
                print(f"  {regime} n={r['n']} side={r['side']} lambda={r['lambda_transformed']:.6g} "
                      f"limit={r['limit']:.6g} err={r['abs_err']:.3g}")
        print(f"{regime}: {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
