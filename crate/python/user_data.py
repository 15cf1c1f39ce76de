"""Run the deterministic analysis on a dataset you supply.

The pool is a CSV with one record per row (for instance flattened, scaled
image features). Records are Poisson-subsampled with probability 1/2 and the
mechanism is their mean. Prints the certified noise magnitude next to the
worst-case baselines. No tolerance is attached to the numbers.

    python python/user_data.py pool.csv --radius 1 --v 1 --m 20000
"""
import argparse
import csv
import json
import subprocess
import sys


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("pool")
    ap.add_argument("--header", action="store_true")
    ap.add_argument("--radius", type=float, required=True, help="l2 bound on the mean output")
    ap.add_argument("--v", type=float, default=1.0)
    ap.add_argument("--beta", type=float, default=0.1)
    ap.add_argument("--m", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--binary", default="pacest")
    args = ap.parse_args()

    with open(args.pool, newline="") as f:
        reader = csv.reader(f)
        if args.header:
            next(reader)
        first = next(reader)
        n = 1 + sum(1 for _ in reader)
    d = len(first)

    # records are assumed to lie in the same l2 ball as the mean, so swapping
    # one of ~n/2 sampled records moves the mean by at most 2r/(n/2)
    gen = {"kind": "pool-sampler", "source": args.pool, "header": args.header,
           "scheme": {"kind": "poisson", "p": 0.5}}
    mech = {"kind": "builtin-mean", "output_dim": d, "output_radius": args.radius}
    cmd = [args.binary, "analyze-det", "--seed", str(args.seed), "--m", str(args.m), "--v", str(args.v),
           "--beta", str(args.beta), "--generator", json.dumps(gen), "--mechanism", json.dumps(mech),
           "--n", str(n // 2), "--delta2", str(2 * args.radius / max(n // 2, 1))]
    out = subprocess.run(cmd, capture_output=True, text=True)
    if out.returncode == 1:
        sys.exit(out.stderr)
    report = json.loads(out.stdout)
    base = report["baselines"]
    print(f"records={n} dim={d} exit={out.returncode}")
    print(f"certified MI <= {report['certificate']['v_claimed']}")
    print(f"PAC noise E||B|| ~ {base['pac_noise_magnitude']:.4g}")
    print(f"worst-case scale r*sqrt(d/v) = {base['worst_case']['scale_lower']:.4g}")
    if "zcdp" in base["worst_case"]:
        print(f"zCDP noise magnitude = {base['worst_case']['zcdp']['magnitude']:.4g}")


if __name__ == "__main__":
    main()
