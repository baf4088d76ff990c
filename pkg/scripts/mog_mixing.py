"""Annealed training on the two-mode mixture, then mode occupancy of trained vs tuned HMC."""
import argparse
import logging

from l2hmc.diagnostics import mode_occupancy
from l2hmc.energy import build_energy
from l2hmc.integrator import IntegratorConfig
from l2hmc.sampler import run_chains
from l2hmc.training import paper_defaults, train, tune_hmc


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--iters", type=int, default=5000)
    ap.add_argument("--steps", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    energy = build_energy({"kind": "mog", "dim": 2})
    tuned = tune_hmc(energy, 10, seed=args.seed)
    res = train(paper_defaults("mog", n_iters=args.iters, eps=tuned.best_eps, seed=args.seed), energy)
    start = energy.centroids[:1]
    for name, params, eps in (("trained", res.params, res.eps),
                              ("hmc", res.params.with_zero_heads(), tuned.best_eps)):
        (tr,) = run_chains(start, args.steps, params, res.masks, energy,
                           IntegratorConfig(eps, params.M), seed=args.seed + 11)
        occ = mode_occupancy(tr.positions, energy.centroids)
        print(f"{name}: eps={eps:.4g} acceptance={tr.accepts.mean():.3f} occupancy={occ.round(4).tolist()}")


if __name__ == "__main__":
    main()
