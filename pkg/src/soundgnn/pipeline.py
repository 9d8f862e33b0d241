"""End-to-end experiment runs driven by a TOML config.

Stages run in order: data generation (or loading), training for every
paradigm and seed, channel analysis, rule checks, and test-set scoring.
Each run writes its own artifacts plus a ``run.json`` row; the aggregate
CSV is rebuilt from those rows alone.

Config schema (all keys optional except where noted)::

    seed = 0                      # master seed; all sub-seeds derive from it
    seeds = 5                     # runs per paradigm

    [data]
    directory = "path"            # existing data directory, or generate:
    constants = 100
    predicates = 5
    facts = 400
    target_fraction = 0.1
    patterns = [{pattern = "hier", k1 = 2, k2 = 100000}]
    n_monotonic = 1               # mixed datasets only, with n_nonmonotonic
    n_nonmonotonic = 3

    [train]
    paradigms = ["rgcn", "mgcn", "rx:50"]
    epochs = 500
    learning_rate = 0.01
    patience = 50
    layers = 2
    hidden_multiplier = 2

    [analysis]
    method = "auto"               # exact, sampled or auto
    samples = 1000

    [extract]
    enumerate = true              # full rule space for #1B / #2B
    max_body = 2
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import tomli

from .channels import analyze
from .datalog import read_dataset
from .errors import ValidationError
from .extraction import LINKPRED, RuleSpaceConfig, check_many, extract_all_sound
from .gnn import SumGnn, save_model
from .loginfer import AugmentConfig, Bundle, PatternSpec, build_bundle, synthetic_kg
from .metrics import EvalReport, evaluate_scores
from .trainer import TrainConfig, TrainExample, init_model, scores, train, write_history

COLUMNS = ("%Acc", "%Prec", "%Rec", "Loss", "%UB", "%Stable", "%Inc", "%Safe",
           "%SO", "%NG", "%NB", "#1B", "#2B")


class StageError(ValidationError):
    """A pipeline stage failed; the message names the stage."""


def derive_seed(seed: int, label: str) -> int:
    """Sub-seed for a named stage, independent of every other label."""
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def parse_paradigm(text: str) -> Tuple[str, Optional[float]]:
    """``rgcn``, ``mgcn`` or ``rx:X``."""
    name, _, x = text.partition(":")
    if name == "rx":
        if not x:
            raise ValidationError("rx paradigm needs a percentage, e.g. rx:50")
        return name, float(x)
    if x:
        raise ValidationError(f"paradigm {name} takes no parameter")
    return name, None


def load_config(path: Union[str, Path]) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except tomli.TOMLDecodeError as e:
        raise ValidationError(f"{path}: {e}") from None


def build_data(cfg: dict, seed: int, base_dir: Path) -> Bundle:
    data = cfg.get("data", {})
    if "directory" in data:
        return Bundle.load((base_dir / data["directory"]) if not Path(data["directory"]).is_absolute()
                           else data["directory"])
    if "input" in data:
        base = read_dataset(base_dir / data["input"])
    else:
        base = synthetic_kg(data.get("constants", 100), data.get("predicates", 5), data.get("facts", 400),
                            derive_seed(seed, "kg"))
    patterns = tuple(PatternSpec(p["pattern"], p.get("k1", 1), p.get("k2", 10 ** 6))
                     for p in data.get("patterns", [{"pattern": "hier", "k1": 2}]))
    aug = AugmentConfig(patterns, data.get("target_fraction", 0.1), data.get("valid_fraction", 0.1),
                        data.get("test_fraction", 0.2), data.get("n_monotonic"), data.get("n_nonmonotonic"),
                        derive_seed(seed, "augment"))
    return build_bundle(base, aug)


def examples(bundle: Bundle) -> Dict[str, TrainExample]:
    return {
        "train": TrainExample(bundle.train_input, bundle.train_target, bundle.negatives.get("train", frozenset())),
        "valid": TrainExample(bundle.eval_input, bundle.valid, bundle.negatives.get("valid", frozenset())),
        "test": TrainExample(bundle.eval_input, bundle.test, bundle.negatives.get("test", frozenset())),
    }


def evaluate_model(m: SumGnn, ex: TrainExample, threshold: float, **metadata) -> EvalReport:
    s = scores(m, ex)
    labels = [1] * len(ex.positives) + [0] * len(ex.negatives)
    return evaluate_scores(s, labels, threshold, **metadata)


@dataclass
class RunRow:
    model: str
    seed: str
    values: Dict[str, Optional[float]]

    def to_json(self) -> dict:
        return {"model": self.model, "seed": self.seed, "values": self.values}


def run_one(bundle: Bundle, paradigm: str, seed: int, cfg: dict, out: Path, jobs: int = 1,
            label: Optional[str] = None) -> RunRow:
    """Train, analyse, audit and score one model; ``label`` names the run in
    the aggregate (default: the seed)."""
    name, x = parse_paradigm(paradigm)
    tcfg = cfg.get("train", {})
    acfg = cfg.get("analysis", {})
    ecfg = cfg.get("extract", {})
    train_seed = derive_seed(seed, f"train/{paradigm}")
    tc = TrainConfig(epochs=tcfg.get("epochs", 100), learning_rate=tcfg.get("learning_rate", 0.001),
                     paradigm=name, x=x, patience=tcfg.get("patience", 50), seed=train_seed,
                     hidden_multiplier=tcfg.get("hidden_multiplier", 2), layers=tcfg.get("layers", 2),
                     history_samples=tcfg.get("history_samples", 100))
    exs = examples(bundle)
    out.mkdir(parents=True, exist_ok=True)
    stage = "train"
    try:
        result = train(init_model(bundle.signature, tc), exs["train"], exs["valid"], tc)
        save_model(result.model, out / "model.json")
        write_history(out / "history.csv", result.history)

        stage = "classify-channels"
        report = analyze(result.model, acfg.get("method", "auto"), acfg.get("samples", 1000),
                         derive_seed(seed, f"probe/{paradigm}"))
        (out / "channels.json").write_text(json.dumps(report.to_json(), indent=1) + "\n", encoding="utf-8")

        stage = "extract-rules"
        space = RuleSpaceConfig(max_body_atoms=ecfg.get("max_body", 2), head_mode=LINKPRED)
        if ecfg.get("enumerate", True):
            extraction = extract_all_sound(result.model, report, space, bundle.rules, jobs)
            counts = extraction.counts
            injected = extraction.injected
        else:
            injected = check_many(result.model, bundle.rules, report, LINKPRED, 1)
            counts = {}
        (out / "verdicts.json").write_text(json.dumps(
            {"counts": counts, "injected": [v.to_json() for v in injected]}, indent=1) + "\n", encoding="utf-8")

        stage = "evaluate"
        ev = evaluate_model(result.model, exs["test"], result.threshold, seed=seed, paradigm=paradigm)
        (out / "eval.json").write_text(json.dumps(ev.to_json(), indent=1) + "\n", encoding="utf-8")
    except ValidationError as e:
        raise StageError(f"[{stage}] {paradigm} seed {seed}: {e}") from None

    n_inj = len(injected)
    pct = report.percentages()

    def share(status: str) -> Optional[float]:
        return 100.0 * sum(v.status == status for v in injected) / n_inj if n_inj else None

    values = {
        "%Acc": 100.0 * ev.accuracy, "%Prec": 100.0 * ev.precision, "%Rec": 100.0 * ev.recall,
        "Loss": result.final_loss, "%UB": pct["pct_ub"], "%Stable": pct["pct_stable"],
        "%Inc": pct["pct_inc"], "%Safe": pct["pct_safe"],
        "%SO": share("SO"), "%NG": share("NG"), "%NB": share("NB"),
        "#1B": counts.get("#1B"), "#2B": counts.get("#2B"),
    }
    row = RunRow(paradigm, label if label is not None else str(seed), values)
    (out / "run.json").write_text(json.dumps(row.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return row


def _fmt(v: Optional[float]) -> str:
    return "" if v is None else f"{v:.4f}"


def aggregate(rows: Sequence[RunRow]) -> str:
    """CSV text: every per-seed row, then one mean row per model."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("model", "seed") + COLUMNS)
    models: Dict[str, List[RunRow]] = {}
    for r in rows:
        models.setdefault(r.model, []).append(r)
        w.writerow([r.model, r.seed] + [_fmt(r.values.get(c)) for c in COLUMNS])
    for model, group in models.items():
        means = []
        for c in COLUMNS:
            vals = [r.values.get(c) for r in group if r.values.get(c) is not None]
            means.append(_fmt(float(np.mean(vals))) if vals else "")
        w.writerow([model, "mean"] + means)
    return buf.getvalue()


def collect_rows(out: Path) -> List[RunRow]:
    rows = []
    def order(path: Path):
        return path.parent.parent.name, int(path.parent.name[len("seed"):])

    for path in sorted(out.glob("runs/*/seed*/run.json"), key=order):
        obj = json.loads(path.read_text(encoding="utf-8"))
        rows.append(RunRow(obj["model"], obj["seed"], obj["values"]))
    return rows


def run_pipeline(config: Union[str, Path, dict], out_dir: Union[str, Path], jobs: int = 1) -> Path:
    """Run every stage and return the path of the aggregate CSV."""
    base_dir = Path(config).parent if not isinstance(config, dict) else Path.cwd()
    cfg = config if isinstance(config, dict) else load_config(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = int(cfg.get("seed", 0))
    n_seeds = cfg.get("seeds", 1)
    seeds = list(n_seeds) if isinstance(n_seeds, list) else list(range(int(n_seeds)))
    try:
        bundle = build_data(cfg, seed, base_dir)
    except ValidationError as e:
        raise StageError(f"[augment] {e}") from None
    bundle.save(out / "data")
    paradigms = cfg.get("train", {}).get("paradigms", ["rgcn"])
    for paradigm in paradigms:
        for s in seeds:
            run_one(bundle, paradigm, derive_seed(seed, f"run/{s}"), cfg,
                    out / "runs" / paradigm.replace(":", "_") / f"seed{s}", jobs, str(s))
    path = out / "aggregate.csv"
    path.write_text(aggregate(collect_rows(out)), encoding="utf-8")
    return path
