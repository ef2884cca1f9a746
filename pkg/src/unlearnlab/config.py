"""Sectioned INI experiment configuration.

Sections: ``dataset``, ``train``, ``retrain``, ``unlearn``, ``eval``,
``theory`` and ``output``. Unknown keys are rejected so typos surface as
errors rather than silently falling back to defaults.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .attacks import PerturbationSpec
from .datasets import Dataset, gen_blobs, gen_moons, load_csv, load_iris, split_unlearn
from .errors import ConfigError
from .trainer import TrainConfig
from .unlearn import METHODS, MethodHyper, RurkHyper

SECTIONS = ("dataset", "train", "retrain", "unlearn", "eval", "theory", "output")
DEFAULT_SEEDS = (131, 42, 7)


def _as_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _as_opt_float(text: str):
    return None if text.strip().lower() == "none" else float(text)


def _as_opt_int(text: str):
    return None if text.strip().lower() == "none" else int(text)


def _as_int_list(text: str) -> tuple:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _as_float_list(text: str) -> tuple:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _as_label(text: str):
    text = text.strip()
    return int(text) if text.lstrip("-").isdigit() else text


# key -> (parser, destination field); destination defaults to the key itself
DATASET_KEYS = {
    "kind": str, "path": str, "num_classes": int, "per_class": int, "dim": int, "spread": float,
    "noise": float, "data_seed": int, "mode": str, "forget_class": int, "forget_fraction": float,
    "test_fraction": float, "split_seed": int, "hidden": _as_int_list, "activation": str,
}
TRAIN_KEYS = {
    "lr0": float, "momentum": float, "weight_decay": float, "batch_size": int, "epochs": int,
    "clip_norm": _as_opt_float, "schedule_T": _as_opt_int, "trials": int, "seeds": _as_int_list,
}
UNLEARN_KEYS = {
    "methods": str, "lr": float, "epochs": int, "batch_size": int, "momentum": float,
    "weight_decay": float, "clip_norm": _as_opt_float, "sigma": float, "beta": float, "k_layers": int,
    "scrub_alpha": float, "scrub_gamma": float, "fisher_alpha": float, "ssd_alpha": float,
    "ssd_lambda": float, "cr_lambda": float, "cr_l2": float,
    "rurk.tau": float, "rurk.lambda_f": float, "rurk.lambda_a": float, "rurk.v": int,
    "rurk.attack_method": str, "rurk.epochs": int, "rurk.attack": str, "rurk.pgd_steps": int,
    "rurk.pgd_step_size": float,
}
EVAL_KEYS = {
    "tau_grid": _as_float_list, "attack.kind": str, "attack.p": str, "attack.tau": float,
    "attack.steps": int, "attack.step_size": float, "attack.targeted": _as_bool,
    "attack.target_rule": _as_label, "attack.c": int, "attack.clamp": _as_bool, "eta": float,
    "relearn_max_epochs": int, "relearn_lr": float, "relearn": _as_bool, "mia_seed": int,
}
THEORY_KEYS = {
    "lemma_pairs": int, "sphere_dims": _as_int_list, "sphere_taus": _as_float_list,
    "sphere_samples": int, "prop2_epsilons": _as_float_list, "prop2_delta": float,
    "prop2_tau": float, "prop2_d": int, "seed": int,
}
OUTPUT_KEYS = {"dir": str}
SCHEMA = {
    "dataset": DATASET_KEYS, "train": TRAIN_KEYS, "retrain": TRAIN_KEYS, "unlearn": UNLEARN_KEYS,
    "eval": EVAL_KEYS, "theory": THEORY_KEYS, "output": OUTPUT_KEYS,
}


@dataclass(frozen=True)
class DatasetBlock:
    kind: str = "blobs"
    path: str = ""
    num_classes: int = 3
    per_class: int = 50
    dim: int = 4
    spread: float = 0.2
    noise: float = 0.1
    data_seed: int = 0
    mode: str = "sample"
    forget_class: int = 0
    forget_fraction: float = 0.5
    test_fraction: float = 0.2
    split_seed: int = 7
    hidden: tuple = (100,)
    activation: str = "relu"

    def load(self, base_dir: Path | None = None) -> Dataset:
        if self.kind == "blobs":
            return gen_blobs(self.num_classes, self.per_class, self.dim, self.spread, self.data_seed)
        if self.kind == "moons":
            return gen_moons(self.per_class, self.noise, self.data_seed)
        if self.kind == "iris":
            return load_iris()
        if self.kind == "csv":
            if not self.path:
                raise ConfigError("[dataset] path: required when kind = csv")
            p = Path(self.path)
            if not p.is_absolute() and base_dir is not None:
                p = base_dir / p
            return load_csv(p)
        raise ConfigError(f"[dataset] kind: unknown dataset kind {self.kind!r}")

    def layer_dims(self, dataset: Dataset) -> list:
        return [dataset.dim, *self.hidden, dataset.num_classes]

    def split(self, dataset: Dataset):
        return split_unlearn(dataset, self.mode, self.forget_class, self.forget_fraction, self.test_fraction, self.split_seed)


@dataclass(frozen=True)
class TrainBlock:
    lr0: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 128
    epochs: int = 10
    clip_norm: float | None = 1.0
    schedule_T: int | None = None
    trials: int = 3
    seeds: tuple = DEFAULT_SEEDS

    def config(self, seed: int) -> TrainConfig:
        return TrainConfig(self.lr0, self.momentum, self.weight_decay, self.batch_size, self.epochs,
                           self.clip_norm, self.schedule_T, seed)


@dataclass(frozen=True)
class UnlearnBlock:
    methods: tuple = ()
    values: dict = field(default_factory=dict)

    def hyper(self, method: str, seed: int) -> MethodHyper:
        plain = {k: v for k, v in self.values.items() if not k.startswith("rurk.") and k != "methods"}
        rurk = {k[5:]: v for k, v in self.values.items() if k.startswith("rurk.")}
        return MethodHyper(method=method, seed=seed, rurk=RurkHyper(**rurk), **plain)


@dataclass(frozen=True)
class EvalBlock:
    tau_grid: tuple = (0.0, 0.01, 0.02, 0.03)
    spec: PerturbationSpec = field(default_factory=lambda: PerturbationSpec(mc_count=100))
    eta: float = 0.05
    relearn: bool = True
    relearn_max_epochs: int = 30
    relearn_lr: float | None = None
    mia_seed: int = 0


@dataclass(frozen=True)
class TheoryBlock:
    lemma_pairs: int = 10_000
    sphere_dims: tuple = (20, 50, 100)
    sphere_taus: tuple = (0.1, 0.2, 0.3, 0.5)
    sphere_samples: int = 100_000
    prop2_epsilons: tuple = (0.1, 1.0, 10.0, 1000.0)
    prop2_delta: float = 0.05
    prop2_tau: float = 0.1
    prop2_d: int = 100
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetBlock
    train: TrainBlock
    retrain: TrainBlock
    unlearn: UnlearnBlock | None
    eval: EvalBlock
    theory: TheoryBlock | None
    out_dir: str = "out"
    source: str = "<string>"
    base_dir: Path | None = None

    @property
    def seeds(self) -> tuple:
        return self.train.seeds

    def canonical(self) -> dict:
        """Plain-data view used in reports (stable key order)."""
        out = {}
        for name in ("dataset", "train", "retrain"):
            out[name] = {f.name: getattr(getattr(self, name), f.name) for f in fields(getattr(self, name))}
        out["unlearn"] = None if self.unlearn is None else {"methods": list(self.unlearn.methods), **self.unlearn.values}
        spec = self.eval.spec
        out["eval"] = {
            "tau_grid": list(self.eval.tau_grid), "eta": self.eval.eta, "relearn": self.eval.relearn,
            "relearn_max_epochs": self.eval.relearn_max_epochs, "relearn_lr": self.eval.relearn_lr,
            "mia_seed": self.eval.mia_seed,
            "attack": {f.name: getattr(spec, f.name) for f in fields(spec)},
        }
        out["theory"] = None if self.theory is None else {f.name: getattr(self.theory, f.name) for f in fields(self.theory)}
        return _listify(out)


def _listify(obj):
    if isinstance(obj, dict):
        return {k: _listify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_listify(v) for v in obj]
    return obj


def _read_section(cp: configparser.ConfigParser, section: str, source: str) -> dict:
    schema = SCHEMA[section]
    out = {}
    for key, raw in cp.items(section):
        if key not in schema:
            raise ConfigError(f"{source}: [{section}] unknown key {key!r}")
        try:
            out[key] = schema[key](raw)
        except ValueError as exc:
            raise ConfigError(f"{source}: [{section}] {key}: {exc}") from exc
    return out


def _build(cls, section: str, values: dict, source: str):
    try:
        return cls(**values)
    except ConfigError as exc:
        raise ConfigError(f"{source}: [{section}] {exc}") from exc


def parse_config(text: str, source: str = "<string>", base_dir: Path | None = None) -> ExperimentConfig:
    # keys are case-sensitive (schedule_T)
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]")
    blocks = {s: _read_section(cp, s, source) if cp.has_section(s) else {} for s in SECTIONS}

    dataset = _build(DatasetBlock, "dataset", blocks["dataset"], source)
    if dataset.mode not in ("sample", "class"):
        raise ConfigError(f"{source}: [dataset] mode: expected sample or class, got {dataset.mode!r}")
    if dataset.activation not in ("relu", "tanh"):
        raise ConfigError(f"{source}: [dataset] activation: expected relu or tanh, got {dataset.activation!r}")
    train = _build(TrainBlock, "train", blocks["train"], source)
    if "trials" in blocks["train"] and "seeds" not in blocks["train"]:
        train = TrainBlock(**{**blocks["train"], "seeds": DEFAULT_SEEDS[: train.trials]})
    if "seeds" in blocks["train"] and "trials" not in blocks["train"]:
        train = TrainBlock(**{**blocks["train"], "trials": len(train.seeds)})
    if train.trials < 1 or len(train.seeds) != train.trials:
        raise ConfigError(f"{source}: [train] seeds: need exactly trials={train.trials} seeds, got {len(train.seeds)}")
    # the re-train block inherits every unspecified field from the train block
    retrain_vals = {**blocks["train"], **blocks["retrain"]}
    retrain_vals.update(trials=train.trials, seeds=train.seeds)
    retrain = _build(TrainBlock, "retrain", retrain_vals, source)
    for name, block in (("train", train), ("retrain", retrain)):
        try:
            block.config(0)
        except ConfigError as exc:
            raise ConfigError(f"{source}: [{name}] {exc}") from exc

    unlearn = None
    if cp.has_section("unlearn"):
        vals = dict(blocks["unlearn"])
        methods = tuple(m.strip() for m in vals.pop("methods", "").split(",") if m.strip())
        if not methods:
            raise ConfigError(f"{source}: [unlearn] methods: at least one method required")
        for m in methods:
            if m not in METHODS:
                raise ConfigError(f"{source}: [unlearn] methods: unknown method {m!r}")
        unlearn = UnlearnBlock(methods, vals)
        for m in methods:
            try:
                unlearn.hyper(m, 0)
            except ConfigError as exc:
                raise ConfigError(f"{source}: [unlearn] {exc}") from exc

    ev = blocks["eval"]
    spec_kw = {k[7:]: v for k, v in ev.items() if k.startswith("attack.")}
    if "c" in spec_kw:
        spec_kw["mc_count"] = spec_kw.pop("c")
    spec_kw.setdefault("mc_count", 100)
    try:
        spec = PerturbationSpec(**spec_kw)
    except ConfigError as exc:
        raise ConfigError(f"{source}: [eval] attack: {exc}") from exc
    eval_block = _build(EvalBlock, "eval", {**{k: v for k, v in ev.items() if not k.startswith("attack.")}, "spec": spec}, source)
    if not eval_block.tau_grid:
        raise ConfigError(f"{source}: [eval] tau_grid: must be non-empty")
    if any(t < 0 for t in eval_block.tau_grid):
        raise ConfigError(f"{source}: [eval] tau_grid: radii must be non-negative")

    theory = _build(TheoryBlock, "theory", blocks["theory"], source) if cp.has_section("theory") else None
    out_dir = blocks["output"].get("dir", "out")
    return ExperimentConfig(dataset, train, retrain, unlearn, eval_block, theory, out_dir, source, base_dir)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, str(path), path.parent)
