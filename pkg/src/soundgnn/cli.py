"""``soundgnn`` command line.

Exit status is 0 on success, 1 when the input is invalid (bad rule text,
data or model files, configuration) and 2 on any other failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import List, Optional

from .channels import ChannelReport, analyze
from .datalog import parse_rule, read_dataset, read_rules, write_dataset, write_rules
from .errors import StaleReportError, ValidationError
from .extraction import (CANONICAL, LINKPRED, NO_SOUND_RULES, RuleSpaceConfig, check_soundness,
                         extract_all_sound, resolve_jobs)
from .gnn import load_model, save_model
from .loginfer import AugmentConfig, Bundle, PatternSpec, build_bundle, synthetic_kg
from .pipeline import evaluate_model, examples, run_pipeline
from .trainer import TrainConfig, init_model, train, write_history


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=1, sort_keys=True))


def _report_for(model, args) -> ChannelReport:
    if getattr(args, "channels", None):
        report = ChannelReport.from_json(json.loads(Path(args.channels).read_text(encoding="utf-8")))
        if report.fingerprint != model.fingerprint():
            raise StaleReportError(f"{args.channels} was computed for a different model")
        return report
    return analyze(model, args.method, args.samples, args.seed)


def _add_analysis_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--channels", help="channel report from classify-channels (computed if omitted)")
    p.add_argument("--method", choices=("auto", "exact", "sampled"), default="auto")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)


def cmd_augment(args) -> int:
    if args.input:
        base = read_dataset(args.input)
    else:
        n, p, f = (int(v) for v in args.synthetic.split(","))
        base = synthetic_kg(n, p, f, args.seed)
    patterns = []
    for text in args.pattern or ["hier:2:1000000"]:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValidationError(f"pattern {text!r}: expected NAME:K1:K2")
        patterns.append(PatternSpec(parts[0], int(parts[1]), int(parts[2])))
    n_m = n_nm = None
    if args.mixed:
        n_m, n_nm = (int(v) for v in args.mixed.split(","))
    cfg = AugmentConfig(tuple(patterns), args.target_fraction, n_monotonic=n_m, n_nonmonotonic=n_nm, seed=args.seed)
    bundle = build_bundle(base, cfg)
    bundle.save(args.out)
    _print_json(bundle.manifest["sizes"])
    return 0


def cmd_train(args) -> int:
    bundle = Bundle.load(args.data)
    cfg = TrainConfig(epochs=args.epochs, learning_rate=args.lr, paradigm=args.paradigm, x=args.x,
                      patience=args.patience, seed=args.seed, layers=args.layers,
                      hidden_multiplier=args.hidden_multiplier)
    exs = examples(bundle)
    result = train(init_model(bundle.signature, cfg), exs["train"], exs["valid"], cfg)
    save_model(result.model, args.out)
    if args.history:
        write_history(args.history, result.history)
    print(f"epochs={len(result.history)} loss={result.final_loss:.6f} threshold={result.threshold:.6f}")
    return 0


def cmd_classify(args) -> int:
    model = load_model(args.model)
    report = analyze(model, args.method, args.samples, args.seed, tol=args.tol)
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_json(), indent=1) + "\n", encoding="utf-8")
    pct = report.percentages()
    print(f"%UB={pct['pct_ub']:.2f} %Stable={pct['pct_stable']:.2f} "
          f"%Inc={pct['pct_inc']:.2f} %Safe={pct['pct_safe']:.2f} ({report.method['kind']})")
    return 0


def cmd_extract(args) -> int:
    model = load_model(args.model)
    report = _report_for(model, args)
    cfg = RuleSpaceConfig(max_body_atoms=args.max_body, head_mode=args.mode)
    injected = read_rules(args.injected) if args.injected else []
    result = extract_all_sound(model, report, cfg, injected, args.jobs)
    write_rules(args.out, result.sound_rules, header=f"sound rules for model {model.fingerprint()}")
    if args.report:
        Path(args.report).write_text(json.dumps(result.to_json(), indent=1) + "\n", encoding="utf-8")
    print(" ".join(f"{k}={v}" for k, v in result.counts.items()))
    return 0


def cmd_check_rule(args) -> int:
    model = load_model(args.model)
    report = _report_for(model, args)
    verdict = check_soundness(model, parse_rule(args.rule), report, args.mode)
    _print_json(verdict.to_json())
    return 0


def cmd_counterexample(args) -> int:
    model = load_model(args.model)
    report = _report_for(model, args)
    verdict = check_soundness(model, parse_rule(args.rule), report, args.mode)
    if verdict.kind != NO_SOUND_RULES:
        raise ValidationError(f"no counterexample: verdict is {verdict.kind} ({verdict.reason or 'see check-rule'})")
    write_dataset(args.out, verdict.dataset)
    print(f"d={verdict.d} head={verdict.head_fact} facts={len(verdict.dataset)}"
          + (" (lifted dataset; see caveat)" if verdict.caveat else ""))
    return 0


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    bundle = Bundle.load(args.data)
    ex = examples(bundle)[args.split]
    t = args.threshold if args.threshold is not None else 1.0 / (1.0 + math.exp(-model.threshold))
    _print_json(evaluate_model(model, ex, t, split=args.split).to_json())
    return 0


def cmd_pipeline(args) -> int:
    path = run_pipeline(args.config, args.out, args.jobs)
    print(path.read_text(encoding="utf-8"), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="soundgnn", description=__doc__.splitlines()[0])
    parser.add_argument("--jobs", type=int, default=None,
                        help="worker processes for rule checks (default: $SOUNDGNN_JOBS or 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("augment", help="generate an enriched dataset directory")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="base knowledge graph TSV")
    src.add_argument("--synthetic", help="random base graph CONSTANTS,PREDICATES,FACTS")
    p.add_argument("--pattern", action="append", help="NAME:K1:K2, repeatable (hier, sym, cup, nmhier)")
    p.add_argument("--mixed", help="#M,#NM head predicate pools")
    p.add_argument("--target-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train a link-prediction sum-GNN")
    p.add_argument("--data", required=True)
    p.add_argument("--paradigm", choices=("rgcn", "mgcn", "rx"), default="rgcn")
    p.add_argument("--x", type=float, default=None, help="percentage for the rx paradigm")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--patience", type=int, default=50)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--hidden-multiplier", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--history")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify-channels", help="safe / monotonicity / unbounded channel report")
    p.add_argument("--model", required=True)
    p.add_argument("--method", choices=("auto", "exact", "sampled"), default="auto")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=0.0, help="treat |w| <= tol as zero")
    p.add_argument("--out")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("extract-rules", help="enumerate and check rules, writing the sound ones")
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=(CANONICAL, LINKPRED), default=LINKPRED)
    p.add_argument("--max-body", type=int, default=2)
    p.add_argument("--injected", help="rules file to audit (SO / NG / NB)")
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="per-rule verdicts JSON")
    _add_analysis_args(p)
    p.set_defaults(func=cmd_extract)

    for name, func, helptext in (("check-rule", cmd_check_rule, "soundness verdict for one rule"),
                                 ("find-counterexample", cmd_counterexample,
                                  "dataset on which an unbounded head channel misses the rule")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--model", required=True)
        p.add_argument("--rule", required=True)
        p.add_argument("--mode", choices=(CANONICAL, LINKPRED), default=LINKPRED)
        _add_analysis_args(p)
        if name == "find-counterexample":
            p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="score a model on a data split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--threshold", type=float, help="threshold on the logistic scale (default: the model's)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="run a full experiment from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.jobs = resolve_jobs(args.jobs)
        return args.func(args)
    except (ValidationError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - the exit code is the contract
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
