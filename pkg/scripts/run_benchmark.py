"""Tune HMC, train the learned sampler, and print one ESS table row.

    python3 scripts/run_benchmark.py scripts/configs/scg.json --out runs/scg
"""
import argparse
import json
import logging
from pathlib import Path

from l2hmc.benchmark import BenchmarkConfig, run_benchmark


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config")
    ap.add_argument("--out", default=None)
    ap.add_argument("--iters", type=int, default=None, help="override train.n_iters")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    blob = json.loads(Path(args.config).read_text())
    if args.iters is not None:
        blob.setdefault("train", {})["n_iters"] = args.iters
    res = run_benchmark(BenchmarkConfig.from_dict(blob))
    row = res.row
    print(f"{row['distribution']}: ess_l2hmc={row['ess_l2hmc']:.4g} ess_hmc={row['ess_hmc']:.4g} "
          f"ratio={row['ratio']:.3g}")
    for name in ("l2hmc", "hmc"):
        d = res.details[name]
        print(f"  {name}: eps={d['eps']:.4g} acceptance={d['acceptance']:.3f} "
              f"mean_chain_ess={d['mean']:.4g}" +
              (f" occupancy={d['mode_occupancy']}" if "mode_occupancy" in d else ""))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "result.json").write_text(json.dumps({"row": row, "details": res.details}, indent=1))


if __name__ == "__main__":
    main()
