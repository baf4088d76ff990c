"""Command line: train, sample, benchmark, check.

Exit codes: 0 ok, 2 invalid config or arguments, 3 numerical failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from .benchmark import BenchmarkConfig, run_benchmark
from .checks import check_suite
from .diagnostics import mode_occupancy, multi_chain_ess
from .energy import DivergenceError, EnergyModel, build_energy
from .integrator import IntegratorConfig
from .netfn import load_checkpoint, save_checkpoint
from .sampler import run_chains, write_trace_csv
from .training import ConfigError, TrainConfig, TrainingDivergence, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("l2hmc")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"{path} is not valid JSON: {exc}") from exc


def _write_json(path: Path, blob) -> None:
    path.write_text(json.dumps(blob, indent=1, sort_keys=True))


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot create {out}: {exc}") from exc
    return out


def _energy(spec: dict) -> EnergyModel:
    try:
        return build_energy(spec)
    except (ValueError, TypeError) as exc:
        raise CliError(EXIT_CONFIG, f"energy: {exc}") from exc


def _write_manifest(out: Path, command: str, config: dict, seed, artifacts: dict, t0: float,
                    extra: dict | None = None) -> dict:
    manifest = {"command": command, "config": config, "seed": seed,
                "artifacts": {k: str(v) for k, v in artifacts.items()},
                "wall_clock_seconds": time.time() - t0, "version": _version()}
    if extra:
        manifest.update(extra)
    _write_json(out / "manifest.json", manifest)
    return manifest


def load_train_config(blob: dict, seed: int | None = None) -> tuple[EnergyModel, TrainConfig]:
    unknown = set(blob) - {"energy", "train"}
    if unknown:
        raise CliError(EXIT_CONFIG, f"{sorted(unknown)[0]}: unknown config key")
    if "energy" not in blob:
        raise CliError(EXIT_CONFIG, "energy: missing")
    energy = _energy(blob["energy"])
    train_blob = dict(blob.get("train", {}))
    if seed is not None:
        train_blob["seed"] = seed
    try:
        cfg = TrainConfig.from_dict(train_blob)
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    except TypeError as exc:
        raise CliError(EXIT_CONFIG, f"train: {exc}") from exc
    return energy, cfg


def cmd_train(args) -> dict:
    t0 = time.time()
    blob = _read_json(args.config)
    energy, cfg = load_train_config(blob, args.seed)
    out = _out_dir(args.out)
    try:
        result = train(cfg, energy)
    except (TrainingDivergence, DivergenceError) as exc:
        raise CliError(EXIT_NUMERIC, f"training diverged: {exc}") from exc
    ckpt = out / "checkpoint.json"
    save_checkpoint(ckpt, result.params, result.masks, result.eps, cfg.seed)
    result.report.checkpoint = ckpt.name
    report = out / "train_report.json"
    _write_json(report, result.report.to_dict())
    snapshot = {"energy": energy.to_spec(), "train": cfg.to_dict()}
    return _write_manifest(out, "train", snapshot, cfg.seed,
                           {"checkpoint": ckpt, "train_report": report}, t0)


def cmd_sample(args) -> dict:
    t0 = time.time()
    energy = _energy(_read_json(args.energy))
    try:
        params, masks, eps, _ = load_checkpoint(args.checkpoint)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read checkpoint: {exc}") from exc
    except (KeyError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"checkpoint: {exc}") from exc
    if params.n != energy.dim:
        raise CliError(EXIT_CONFIG, f"dim: checkpoint has n={params.n}, energy has dim={energy.dim}")
    if args.steps < 1 or args.chains < 1:
        raise CliError(EXIT_CONFIG, "steps and chains must be >= 1")
    if args.hmc:
        params = params.with_zero_heads()
    if args.eps is not None:
        eps = args.eps
    out = _out_dir(args.out)
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 7]))
    x0 = energy.sample(rng, args.chains)
    traces = run_chains(x0, args.steps, params, masks, energy, IntegratorConfig(eps, params.M),
                        args.seed)
    artifacts = {}
    for i, tr in enumerate(traces):
        path = out / f"trace_{i}.csv"
        write_trace_csv(path, tr)
        artifacts[f"trace_{i}"] = path
    diag = diagnostics_blob(energy, [t.positions for t in traces])
    diag["acceptance"] = float(np.mean([t.accept_probs.mean() for t in traces]))
    diag_path = out / "diagnostics.json"
    _write_json(diag_path, diag)
    artifacts["diagnostics"] = diag_path
    config = {"checkpoint": str(args.checkpoint), "energy": energy.to_spec(), "steps": args.steps,
              "chains": args.chains, "hmc": args.hmc, "eps": eps}
    return _write_manifest(out, "sample", config, args.seed, artifacts, t0)


def diagnostics_blob(energy: EnergyModel, positions: list) -> dict:
    summary = multi_chain_ess(positions, energy.mean(), energy.covariance())
    blob = {"per_chain_ess": summary.per_chain, "mean_ess": summary.mean,
            "min_ess": summary.min, "max_ess": summary.max, "pooled_ess": summary.pooled,
            "autocorr": summary.autocorr, "truncation_index": summary.truncation_index,
            "sample_moments": summary.sample_moments}
    cents = energy.centroids
    blob["mode_occupancy"] = (mode_occupancy(np.concatenate(positions), cents).tolist()
                              if cents is not None else None)
    return blob


def cmd_benchmark(args) -> dict:
    t0 = time.time()
    blob = _read_json(args.config)
    try:
        cfg = BenchmarkConfig.from_dict(blob)
        build_energy(cfg.energy)
        TrainConfig.from_dict({k: v for k, v in cfg.train.items()})
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    except (ValueError, TypeError) as exc:
        raise CliError(EXIT_CONFIG, f"config: {exc}") from exc
    out = _out_dir(args.out)
    try:
        res = run_benchmark(cfg)
    except (TrainingDivergence, DivergenceError, FloatingPointError) as exc:
        raise CliError(EXIT_NUMERIC, str(exc)) from exc
    table_json = out / "ess_table.json"
    _write_json(table_json, {"rows": [res.row], "details": res.details,
                             "hmc_tuning": res.tune_table})
    table_csv = out / "ess_table.csv"
    with open(table_csv, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["distribution", "ess_l2hmc", "ess_hmc", "ratio"])
        w.writeheader()
        w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in res.row.items()})
    ckpt = out / "checkpoint.json"
    tr = res.train_result
    save_checkpoint(ckpt, tr.params, tr.masks, tr.eps, cfg.seed)
    report = out / "train_report.json"
    tr.report.checkpoint = ckpt.name
    _write_json(report, tr.report.to_dict())
    return _write_manifest(out, "benchmark", blob, cfg.seed,
                           {"ess_table_json": table_json, "ess_table_csv": table_csv,
                            "checkpoint": ckpt, "train_report": report}, t0,
                           {"row": res.row})


def cmd_check(args) -> dict:
    t0 = time.time()
    results = check_suite(seed=args.seed, quick=args.quick)
    for r in results:
        print(r.line())
    blob = {"command": "check", "seed": args.seed, "quick": args.quick,
            "properties": [dict(name=r.name, max_error=r.max_error, tolerance=r.tolerance,
                                passed=r.passed) for r in results],
            "passed": all(r.passed for r in results),
            "wall_clock_seconds": time.time() - t0, "version": _version()}
    if args.out:
        out = _out_dir(args.out)
        _write_json(out / "manifest.json", blob)
    return blob


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="l2hmc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a sampler from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="run chains from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--energy", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--hmc", action="store_true", help="zero the output heads (plain HMC)")
    p.add_argument("--eps", type=float, default=None, help="override the checkpoint step size")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("benchmark", help="tuned HMC vs trained sampler ESS table")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("check", help="run the property check suite")
    p.add_argument("--quick", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.command == "check" and not result["passed"]:
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
