"""Command-line runner.

    epicrl run <config>
    epicrl ablate <config> --sweep {kappa,N,lambda0}
    epicrl verify <config>

Outputs go to ``output_dir`` (or ``$EPIC_OUTPUT_DIR``): one ``seed_<s>/``
directory per seed with rewards.csv, tasks.csv, bounds.csv, snapshots/ and,
when verification runs, verify.csv; plus summary.json at the top level.
Exit status: 0 on success, 2 for configuration errors, 1 for runtime failures.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import epic, verify
from .config import ExperimentConfig, load_config
from .errors import ConfigError
from .policy import to_json
from .rng import derive_seed

REWARD_TAIL = ("reward", "update_index")
TASK_COLUMNS = ("task_index", "param_name", "value")
BOUND_COLUMNS = ("update_index", "kl_step", "kl_running_sum", "kl_budget", "training_regularizer",
                 "theorem1_bound", "r_hat", "s_min_hat", "tv_premise_ok", "skipped")
VERIFY_COLUMNS = ("kind", "seed", "trace", "T", "N", "H", "S_T", "max_abs_D", "bound_azuma",
                  "bound_freedman", "training_error", "expected_loss", "gap", "gap_stderr",
                  "final_expected_loss", "theorem1_bound", "training_regularizer",
                  "confidence_stated", "confidence_proof")
SWEEP_COLUMNS = ("sweep", "value", "final_window_mean", "final_window_std", "reward_band_std",
                 "mean_reward")
EVALUATION_NOTE = ("per-task reward is the discounted return of the posterior-mean policy, evaluated "
                   "before the task enters an update; exact on tabular tasks, averaged over "
                   "eval_episodes rollouts otherwise")


class SeedFailure(RuntimeError):
    def __init__(self, seed, cause):
        super().__init__(f"seed {seed}: {type(cause).__name__}: {cause}")
        self.seed = seed


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return "%.17g" % x


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def _output_root(cfg: ExperimentConfig) -> Path:
    return Path(os.environ.get("EPIC_OUTPUT_DIR") or cfg["experiment", "output_dir"])


# ---------------------------------------------------------------------------
# One seed

def _execute(cfg: ExperimentConfig, seed: int) -> epic.RunLog:
    stream = cfg.stream_config()
    algo = cfg["experiment", "algo"]
    if algo == "single_task":
        return epic.single_task_baseline(stream, cfg["experiment", "inner_steps"], seed)
    reg = cfg.regularizer_config()
    if algo == "epicg_ft":
        return epic.epicg_ft(stream, reg, cfg["experiment", "inner_steps"], seed)
    return epic.run_lifelong(stream, reg, seed)


def _verify_rows(cfg: ExperimentConfig, run: epic.RunLog, seed: int) -> list:
    v = cfg.values["verify"]
    reg = cfg.regularizer_config()
    rows = []
    if run.updates:
        g = verify.gap_report(run, reg, v["holdout_tasks"], seed, draws=v["gap_draws"])
        rows.append(("gap", seed, "", g.windows, run.N, reg.H, None, None, None, None,
                     g.training_error, g.expected_loss, g.gap, g.gap_stderr, g.final_expected_loss,
                     g.theorem1_bound, g.regularizer, g.confidence_stated, g.confidence_proof))
    env = run.stream.env
    if v["traces"] > 0 and env.kind == "chain" and run.stream.policy == "linear" and run.updates:
        T = len(run.updates)
        for k in range(v["traces"]):
            tr = verify.simulate_martingale(env, run.snapshots[:T], T, run.N, reg.H,
                                            derive_seed(seed, "trace", k), delta=v["delta"])
            rows.append(("martingale", seed, k, T, run.N, reg.H, tr.S_T, tr.max_abs_D, tr.bound_az[-1],
                         tr.bound_fr[-1], None, None, None, None, None, None, None, None, None))
    return rows


def _run_seed(cfg: ExperimentConfig, seed: int, out: Path, with_verify: bool) -> dict:
    try:
        run = _execute(cfg, seed)
        rows = _verify_rows(cfg, run, seed) if with_verify else None
    except ConfigError:
        raise
    except Exception as exc:  # noqa: BLE001 - reported with the seed
        raise SeedFailure(seed, exc) from exc
    d = out / f"seed_{seed}"
    names = run.param_names
    _write_csv(d / "rewards.csv", ("task_index", *names, *REWARD_TAIL),
               [(i + 1, *[p[n] for n in names], r, u)
                for i, (p, r, u) in enumerate(zip(run.task_params, run.rewards, run.update_index))])
    _write_csv(d / "tasks.csv", TASK_COLUMNS,
               [(i + 1, n, p[n]) for i, p in enumerate(run.task_params) for n in names])
    _write_csv(d / "bounds.csv", BOUND_COLUMNS,
               [(u.update_index, u.kl_step, u.kl_running_sum, u.kl_budget, u.training_regularizer,
                 u.theorem1_bound, u.r_hat, u.s_min_hat, u.tv_premise_ok, u.skipped) for u in run.updates])
    if run.snapshots:
        snap_dir = d / "snapshots"
        snap_dir.mkdir(parents=True, exist_ok=True)
        for l, snap in enumerate(run.snapshots):
            (snap_dir / f"posterior_{l:04d}.json").write_text(to_json(snap) + "\n", encoding="utf-8")
    if rows is not None:
        _write_csv(d / "verify.csv", VERIFY_COLUMNS, rows)
    w = cfg["experiment", "final_window"]
    rewards = run.reward_array
    last = run.updates[-1] if run.updates else None
    return {
        "seed": seed,
        "final_window_mean": float(np.mean(rewards[-w:])),
        "first_window_mean": float(np.mean(rewards[:w])),
        "mean_reward": float(np.mean(rewards)),
        "n_updates": len(run.updates),
        "kl_running_sum": last.kl_running_sum if last else None,
        "theorem1_bound": last.theorem1_bound if last else None,
        "training_regularizer": last.training_regularizer if last else None,
        "r_hat": last.r_hat if last else None,
        "s_min_hat": last.s_min_hat if last else None,
        "tv_premise_ok": last.tv_premise_ok if last else None,
        "notes": run.notes,
        "rewards": rewards.tolist(),
    }


def _mean_std(values) -> dict:
    a = np.asarray(values, dtype=np.float64)
    return {"mean": float(a.mean()), "std": float(a.std(ddof=1)) if a.size > 1 else 0.0}


def run_experiment(cfg: ExperimentConfig, out: Path | None = None, with_verify: bool | None = None,
                   log=print) -> dict:
    """Run every seed, write per-seed outputs and summary.json; returns the summary."""
    out = _output_root(cfg) if out is None else Path(out)
    with_verify = cfg["verify", "enabled"] if with_verify is None else with_verify
    seeds = cfg["experiment", "seeds"]
    workers = min(cfg["experiment", "workers"], len(seeds))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_seed, [cfg] * len(seeds), seeds, [out] * len(seeds),
                                    [with_verify] * len(seeds)))
    else:
        results = [_run_seed(cfg, s, out, with_verify) for s in seeds]
    for r in results:
        log(f"seed {r['seed']}: final-window mean {r['final_window_mean']:.4f}, "
            f"{r['n_updates']} updates")
    per_task = np.array([r.pop("rewards") for r in results])
    band = float(per_task.std(axis=0, ddof=1).mean()) if len(results) > 1 else 0.0
    summary = {
        "algo": cfg["experiment", "algo"],
        "evaluation": EVALUATION_NOTE,
        "per_seed": results,
        "final_window_mean": _mean_std([r["final_window_mean"] for r in results]),
        "overall_reward": _mean_std([r["mean_reward"] for r in results]),
        "reward_band_std": band,
        "config": cfg.resolved(),
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return summary


def ablate(cfg: ExperimentConfig, sweep: str, out: Path | None = None, log=print) -> list:
    out = _output_root(cfg) if out is None else Path(out)
    key_section = {"kappa": "pacbayes", "N": "experiment", "lambda0": "pacbayes"}[sweep]
    rows = []
    for value in cfg["ablate", sweep]:
        arm = cfg.with_value(key_section, sweep, value)
        try:
            arm.validate()
        except ConfigError as exc:
            raise ConfigError(f"{sweep}={value}: {exc}", cfg.line("ablate", sweep)) from None
        log(f"{sweep} = {value}")
        s = run_experiment(arm, out / f"{sweep}_{fmt(value)}", with_verify=False, log=log)
        rows.append((sweep, fmt(value), s["final_window_mean"]["mean"], s["final_window_mean"]["std"],
                     s["reward_band_std"], s["overall_reward"]["mean"]))
    _write_csv(out / "sweep_summary.csv", SWEEP_COLUMNS, rows)
    return rows


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="epicrl", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="verb", required=True)
    p_run = sub.add_parser("run", help="run the configured algorithm for every seed")
    p_run.add_argument("config")
    p_ab = sub.add_parser("ablate", help="sweep one hyperparameter")
    p_ab.add_argument("config")
    p_ab.add_argument("--sweep", required=True, choices=("kappa", "N", "lambda0"))
    p_ver = sub.add_parser("verify", help="run and write the verification report")
    p_ver.add_argument("config")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.verb == "run":
            run_experiment(cfg)
        elif args.verb == "ablate":
            ablate(cfg, args.sweep)
        else:
            if cfg["experiment", "algo"] == "single_task":
                raise ConfigError("verification needs a lifelong algorithm (epicg or epicg_ft)",
                                  cfg.line("experiment", "algo"))
            run_experiment(cfg, with_verify=True)
    except ConfigError as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return 2
    except SeedFailure as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
