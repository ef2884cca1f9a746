"""Command-line experiment runner: ``unlearn-lab <subcommand> --config <path>``.

Per-trial artifacts live in ``<out>/trial<i>_seed<s>/``; the aggregated
``report.json``, ``rk_curve.csv`` and ``theory_report.csv`` sit at the top of
``<out>``. Everything except ``metadata.json`` is a deterministic function of
the config and seeds.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
import traceback
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import theory as th
from .config import ExperimentConfig, TheoryBlock, load_config, parse_config
from .errors import CheckpointError, ConfigError, NumericError
from .evaluate import EXCEEDED, avg_gap, evaluate_model, relearn_time, rk_curve, write_report_json, write_rk_csv
from .nn import checkpoint_load, checkpoint_save, init_params
from .trainer import train, write_loss_history
from .unlearn import unlearn

log = logging.getLogger("unlearnlab")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
METRICS = ("retain_acc", "unlearn_acc", "test_acc", "mia_acc")


def demo_config_text() -> str:
    return (resources.files("unlearnlab") / "data" / "demo_iris.ini").read_text()


class Run:
    """Resolved experiment: config, data, split and the trials to execute."""

    def __init__(self, cfg: ExperimentConfig, out: Path, trials: list):
        self.cfg = cfg
        self.out = out
        self.trials = trials  # (trial index, seed)
        self.dataset = cfg.dataset.load(cfg.base_dir)
        self.task = cfg.dataset.split(self.dataset)
        self.dims = cfg.dataset.layer_dims(self.dataset)

    def trial_dir(self, i: int, seed: int) -> Path:
        d = self.out / f"trial{i}_seed{seed}"
        d.mkdir(parents=True, exist_ok=True)
        return d

    @property
    def methods(self) -> tuple:
        return () if self.cfg.unlearn is None else self.cfg.unlearn.methods

    def model_names(self) -> list:
        names = ["retrain"]
        if self.cfg.unlearn is not None:
            names = ["original", "retrain"] + [m for m in self.methods if m != "retrain"]
        return names

    def load(self, i: int, seed: int, name: str):
        path = self.trial_dir(i, seed) / f"{name}.ckpt"
        if not path.exists():
            raise CheckpointError(f"missing checkpoint {path}; run the earlier pipeline stage first")
        return checkpoint_load(path)


# ------------------------------------------------------------------- stages


def stage_train(run: Run) -> None:
    cfg, act = run.cfg, run.cfg.dataset.activation
    for i, seed in run.trials:
        d = run.trial_dir(i, seed)
        if cfg.unlearn is not None:
            model, hist = train(init_params(run.dims, act, seed), run.dataset, run.task.train_idx, cfg.train.config(seed))
            checkpoint_save(model, d / "original.ckpt")
            write_loss_history(hist, d / "loss_original.csv")
        model, hist = train(init_params(run.dims, act, seed), run.dataset, run.task.retain_idx, cfg.retrain.config(seed))
        checkpoint_save(model, d / "retrain.ckpt")
        write_loss_history(hist, d / "loss_retrain.csv")
        log.info("trial %d (seed %d): trained", i, seed)


def stage_unlearn(run: Run) -> None:
    cfg = run.cfg
    if cfg.unlearn is None:
        raise ConfigError(f"{cfg.source}: [unlearn] section required for this subcommand")
    for i, seed in run.trials:
        d = run.trial_dir(i, seed)
        original = run.load(i, seed, "original")
        for method in run.methods:
            if method == "retrain":
                continue
            model = unlearn(original, run.task, cfg.unlearn.hyper(method, seed), cfg.retrain.config(seed))
            checkpoint_save(model, d / f"{method}.ckpt")
            log.info("trial %d (seed %d): %s done", i, seed, method)


def _evaluate_trial(run: Run, i: int, seed: int, curves: dict | None) -> dict:
    cfg = run.cfg
    reports = {name: evaluate_model(run.load(i, seed, name), run.task, cfg.eval.mia_seed + seed) for name in run.model_names()}
    ref = reports["retrain"]
    out = {}
    original = run.load(i, seed, "original") if "original" in reports else None
    relearn_cfg = cfg.train.config(seed)
    if cfg.eval.relearn_lr is not None:
        relearn_cfg = relearn_cfg.updated(lr0=cfg.eval.relearn_lr)
    for name, rep in reports.items():
        rep.avg_gap = avg_gap(rep, ref)
        if original is not None and cfg.eval.relearn:
            rep.relearn_epochs = relearn_time(run.load(i, seed, name), original, run.task, cfg.eval.eta, relearn_cfg, cfg.eval.relearn_max_epochs)
        if curves is not None:
            c = curves[name]
            rep.rk_curve = {f"{t:g}": r for t, r in zip(c.taus, c.r_hat)}
            rep.disagreement_curve = {f"{t:g}": k for t, k in zip(c.taus, c.k_hat)}
            rep.prevalence_curve = {f"{t:g}": p for t, p in zip(c.taus, c.prevalence)}
        out[name] = rep.to_dict()
    return out


def stage_evaluate(run: Run, curves: dict | None = None) -> dict:
    per_trial = {}
    for i, seed in run.trials:
        res = _evaluate_trial(run, i, seed, None if curves is None else curves[(i, seed)])
        write_report_json({"seed": seed, "models": res}, run.trial_dir(i, seed) / "report.json")
        per_trial[(i, seed)] = res
    return per_trial


def stage_rk(run: Run) -> dict:
    """Curves keyed by (trial, seed) then model name."""
    cfg = run.cfg
    curves = {}
    for i, seed in run.trials:
        d = run.trial_dir(i, seed)
        retrain = run.load(i, seed, "retrain")
        for name in run.model_names():
            c = rk_curve(run.load(i, seed, name), retrain, run.task, cfg.eval.tau_grid, cfg.eval.spec, rng=seed)
            write_rk_csv(c, d / f"rk_curve_{name}.csv")
            curves.setdefault((i, seed), {})[name] = c
    return curves


def stage_theory(block: TheoryBlock) -> list:
    rows = []
    n, bad, worst = th.violation_mass_sweep(block.lemma_pairs, block.seed)
    rows.append(th.TheoryRow("violation_mass_sweep", f"pairs={n};seed={block.seed}", 1.0, float(worst), bad == 0))
    for d in block.sphere_dims:
        for tau in block.sphere_taus:
            r = th.hemisphere_expansion(d, tau, block.sphere_samples, block.seed)
            rows.append(th.TheoryRow("hemisphere_expansion", f"d={d};tau={tau:g};n={r.n_samples}", r.bound, r.empirical, r.passes))
    z = th.prop2_bound(0.0, 0.0, block.prop2_tau, block.prop2_d)
    rows.append(th.TheoryRow("prop2_bound", f"eps=0;delta=0;tau={block.prop2_tau:g};d={block.prop2_d}", z, 0.0, z == 0.0))
    # the bound decreases in eps toward its limit 2 delta; the value column carries that limit
    limit, prev = 2 * block.prop2_delta, 1.0
    for eps in sorted(block.prop2_epsilons):
        v = th.prop2_bound(eps, block.prop2_delta, block.prop2_tau, block.prop2_d)
        ok = 0.0 <= v <= prev and (eps < 1e3 or abs(v - limit) <= 1e-6)
        rows.append(th.TheoryRow("prop2_bound", f"eps={eps:g};delta={block.prop2_delta:g};tau={block.prop2_tau:g};d={block.prop2_d}", v, limit, ok))
        prev = v
    return rows


# -------------------------------------------------------------- aggregation


def _pm(values) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    mean, std = float(np.mean(arr)), float(np.std(arr))
    return {"mean": mean, "std": std, "text": f"{mean:.2f}±{std:.2f}"}


def _relearn_summary(values, cap: int) -> dict:
    if any(v == EXCEEDED for v in values):
        return {"values": list(values), "text": f">{cap}"}
    return {"values": list(values), **_pm(values)}


def aggregate(run: Run, per_trial: dict, curves: dict | None) -> dict:
    rows = {}
    trials = list(per_trial.values())
    for name in run.model_names():
        row = {m: _pm([100.0 * t[name][m] for t in trials]) for m in METRICS}
        row["avg_gap"] = _pm([t[name]["avg_gap"] for t in trials])
        relearn = [t[name]["relearn_epochs"] for t in trials]
        row["relearn_epochs"] = None if relearn[0] is None else _relearn_summary(relearn, run.cfg.eval.relearn_max_epochs)
        rows[name] = row
    report = {
        "seeds": [s for _, s in run.trials],
        "units": {"accuracies": "percent", "avg_gap": "percentage points", "relearn_epochs": "epochs"},
        "rows": rows,
        "config": run.cfg.canonical(),
    }
    if curves:
        report["rk_curve"] = mean_curves(curves)
    return report


def mean_curves(curves: dict) -> dict:
    names = next(iter(curves.values())).keys()
    return {name: _mean_curve([t[name] for t in curves.values()]) for name in names}


def _mean_curve(cs: list) -> dict:
    r = np.array([c.r_hat for c in cs])
    with np.errstate(invalid="ignore"):
        # nan marks radii where every forget sample had a zero denominator
        r_mean = [float(np.nanmean(col)) if np.any(np.isfinite(col)) else float("nan") for col in r.T]
        prev = [float(np.nanmean(col)) if np.any(np.isfinite(col)) else float("nan") for col in np.array([c.prevalence for c in cs]).T]
    return {
        "tau": list(cs[0].taus),
        "r_hat": r_mean,
        "k_hat": [float(v) for v in np.mean([c.k_hat for c in cs], axis=0)],
        "prevalence": prev,
        "denominator_zero_count": [int(v) for v in np.sum([c.denominator_zero for c in cs], axis=0)],
    }


def write_long_rk_csv(curves: dict, path: Path) -> None:
    lines = ["model,tau,r_hat,k_hat,prevalence,denominator_zero_count"]
    for name, c in curves.items():
        for row in zip(c["tau"], c["r_hat"], c["k_hat"], c["prevalence"], c["denominator_zero_count"]):
            tau, r, k, p, z = row
            lines.append(f"{name},{tau:.6g},{r:.6g},{k:.6g},{p:.6g},{z}")
    path.write_text("\n".join(lines) + "\n")


def write_metadata(out: Path, argv: list) -> None:
    meta = {
        "argv": argv,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=2) + "\n")


def _print_table(report: dict) -> None:
    rows = report["rows"]
    print(f"{'model':<14}{'retain':>14}{'unlearn':>14}{'test':>14}{'mia':>14}{'avg gap':>10}{'relearn':>14}")
    for name, row in rows.items():
        rl = row["relearn_epochs"]["text"] if row["relearn_epochs"] else "-"
        print(f"{name:<14}" + "".join(f"{row[m]['text']:>14}" for m in METRICS) + f"{row['avg_gap']['mean']:>10.2f}{rl:>14}")
    for name, c in report.get("rk_curve", {}).items():
        pts = ", ".join(f"{t:g}:{r:.3f}" for t, r in zip(c["tau"], c["r_hat"]))
        print(f"r_hat[{name}] {pts}")


# ---------------------------------------------------------------- commands


def _resolve(args, default_text: str | None = None) -> tuple:
    if args.config:
        cfg = load_config(args.config)
    elif default_text is not None:
        cfg = parse_config(default_text, "<builtin demo_iris.ini>")
    else:
        raise ConfigError("--config is required for this subcommand")
    if args.seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, trials=1, seeds=(args.seed,)),
                      retrain=replace(cfg.retrain, trials=1, seeds=(args.seed,)))
    trials = list(enumerate(cfg.seeds))
    if args.trial is not None:
        if not 0 <= args.trial < len(trials):
            raise ConfigError(f"--trial {args.trial} outside 0..{len(trials) - 1}")
        trials = [trials[args.trial]]
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out, trials


def cmd_pipeline(args, stages: tuple, default_text: str | None = None) -> int:
    cfg, out, trials = _resolve(args, default_text)
    write_metadata(out, sys.argv)
    run = Run(cfg, out, trials)
    if "train" in stages:
        stage_train(run)
    # the standalone subcommand demands an [unlearn] block; full runs skip it when absent
    if "unlearn" in stages and (cfg.unlearn is not None or stages == ("unlearn",)):
        stage_unlearn(run)
    curves = stage_rk(run) if "rk" in stages else None
    per_trial = stage_evaluate(run, curves) if "evaluate" in stages else None
    if per_trial is not None:
        report = aggregate(run, per_trial, curves)
        write_report_json(report, out / "report.json")
        _print_table(report)
    if curves is not None:
        mean = mean_curves(curves)
        write_long_rk_csv(mean, out / "rk_curve.csv")
        if per_trial is None:
            for name, c in mean.items():
                print(f"r_hat[{name}] " + ", ".join(f"{t:g}:{r:.3f}" for t, r in zip(c["tau"], c["r_hat"])))
    if "theory" in stages and cfg.theory is not None:
        _write_theory(cfg.theory, out)
    return EXIT_OK


def _write_theory(block: TheoryBlock, out: Path) -> bool:
    rows = stage_theory(block)
    th.write_theory_csv(rows, out / "theory_report.csv")
    for r in rows:
        print(f"{'PASS' if r.verdict else 'FAIL'} {r.name} {r.params} bound={r.bound:.6g} value={r.empirical:.6g}")
    return all(r.verdict for r in rows)


def cmd_theory(args) -> int:
    if args.config:
        cfg = load_config(args.config)
        block = cfg.theory or TheoryBlock()
        out = Path(args.out or cfg.out_dir)
    else:
        block, out = TheoryBlock(), Path(args.out or "out")
    if args.seed is not None:
        block = replace(block, seed=args.seed)
    out.mkdir(parents=True, exist_ok=True)
    write_metadata(out, sys.argv)
    _write_theory(block, out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unlearn-lab", description="Machine-unlearning experiments with residual-knowledge evaluation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "train": "train the Original and Re-train models",
        "unlearn": "apply the configured unlearning methods to the Original",
        "evaluate": "accuracies, MIA, Avg. Gap and re-learn time; writes report.json",
        "rk-curve": "residual-knowledge curves against the Re-train model",
        "theory": "numerical checks of the indistinguishability and concentration bounds",
        "demo-iris": "Iris demo: GD vs RURK residual knowledge (builtin config)",
        "run": "full pipeline: train, unlearn, evaluate, rk-curve, theory",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="INI experiment config")
        p.add_argument("--out", help="output directory (overrides [output] dir)")
        p.add_argument("--seed", type=int, help="run a single trial with this seed")
        p.add_argument("--trial", type=int, help="run only this trial index of the seed list")
    return parser


def _module_of(exc: BaseException) -> str:
    frames = traceback.extract_tb(exc.__traceback__)
    return Path(frames[-1].filename).stem if frames else "?"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    dispatch = {
        "train": lambda: cmd_pipeline(args, ("train",)),
        "unlearn": lambda: cmd_pipeline(args, ("unlearn",)),
        "evaluate": lambda: cmd_pipeline(args, ("evaluate",)),
        "rk-curve": lambda: cmd_pipeline(args, ("rk",)),
        "theory": lambda: cmd_theory(args),
        "demo-iris": lambda: cmd_pipeline(args, ("train", "unlearn", "evaluate", "rk"), demo_config_text()),
        "run": lambda: cmd_pipeline(args, ("train", "unlearn", "evaluate", "rk", "theory")),
    }
    try:
        return dispatch[args.command]()
    except (ConfigError, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error in {_module_of(exc)}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
