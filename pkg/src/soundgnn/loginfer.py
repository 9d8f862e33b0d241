"""Rule-pattern dataset augmentation in the style of LogInfer.

A knowledge graph is enriched once with the consequences of a few
instantiated rule patterns. Consequences go partly into the validation and
test splits, so a model is scored on facts it can only get right by having
learnt the injected rules. Negatives are made by predicate corruption.

Patterns (``R, S, T, P`` are distinct binary predicates):

=======  ============================================
hier     ``R(x,y) -> S(x,y)``
sym      ``R(x,y) -> R(y,x)``
cup      ``R(x,y), S(y,z), T(w,x) -> P(x,y)``
nmhier   ``R(x,y)`` and no ``S(y,z)`` gives ``T(x,y)``
=======  ============================================
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .datalog import (Atom, Dataset, Rule, Signature, format_rule, read_dataset, read_rules,
                      rule_consequences, write_dataset, write_rules)
from .errors import ValidationError

ROLES = {"hier": ("R", "S"), "sym": ("R",), "cup": ("R", "S", "T", "P"), "nmhier": ("R", "S", "T")}
HEAD_ROLE = {"hier": "S", "sym": "R", "cup": "P", "nmhier": "T"}
MONOTONIC = ("hier", "sym", "cup")
TEMPLATES = {
    "hier": ((("R", "x", "y"),), ("S", "x", "y")),
    "sym": ((("R", "x", "y"),), ("R", "y", "x")),
    "cup": ((("R", "x", "y"), ("S", "y", "z"), ("T", "w", "x")), ("P", "x", "y")),
}


@dataclass(frozen=True)
class PatternInstance:
    pattern: str
    bindings: Tuple[Tuple[str, str], ...]

    def __post_init__(self):
        if self.pattern not in ROLES:
            raise ValidationError(f"unknown pattern {self.pattern!r}")
        b = dict(self.bindings)
        if set(b) != set(ROLES[self.pattern]):
            raise ValidationError(f"{self.pattern} needs roles {ROLES[self.pattern]}, got {sorted(b)}")
        if len(set(b.values())) != len(b):
            raise ValidationError(f"{self.pattern}: roles must bind distinct predicates, got {b}")
        object.__setattr__(self, "bindings", tuple(sorted(b.items())))

    @classmethod
    def of(cls, pattern: str, **roles: str) -> "PatternInstance":
        return cls(pattern, tuple(roles.items()))

    @property
    def roles(self) -> Dict[str, str]:
        return dict(self.bindings)

    @property
    def head(self) -> str:
        return self.roles[HEAD_ROLE[self.pattern]]

    @property
    def is_monotonic(self) -> bool:
        return self.pattern in MONOTONIC

    def rule(self) -> Rule:
        """The Datalog rule of a monotonic pattern."""
        if not self.is_monotonic:
            raise ValidationError("nmhier has a negated body atom and no Datalog rule")
        body, head = TEMPLATES[self.pattern]
        roles = self.roles
        return Rule(tuple(Atom(roles[p], args) for p, *args in body), Atom(roles[head[0]], head[1:]))

    def describe(self) -> str:
        if self.is_monotonic:
            return format_rule(self.rule())
        r = self.roles
        return f"{r['R']}(x,y), not {r['S']}(y,z) -> {r['T']}(x,y)"

    def consequences(self, d: Dataset) -> Dataset:
        """Facts derived by one application over ``d`` (negation also
        evaluated against ``d``)."""
        if self.is_monotonic:
            return rule_consequences(self.rule(), d)
        r = self.roles
        has_s = {f.args[0] for f in d if f.predicate == r["S"]}
        return frozenset(Atom(r["T"], f.args) for f in d
                         if f.predicate == r["R"] and f.args[1] not in has_s)

    def to_json(self) -> dict:
        return {"pattern": self.pattern, "bindings": self.roles, "rule": self.describe()}


@dataclass(frozen=True)
class PatternSpec:
    """``k1`` instances of ``pattern``, each contributing at most ``k2`` new facts."""

    pattern: str
    k1: int
    k2: int

    def __post_init__(self):
        if self.pattern not in ROLES:
            raise ValidationError(f"unknown pattern {self.pattern!r}")
        if self.k1 < 1 or self.k2 < 1:
            raise ValidationError("k1 and k2 must be >= 1")


@dataclass(frozen=True)
class AugmentConfig:
    patterns: Tuple[PatternSpec, ...] = (PatternSpec("hier", 2, 10 ** 6),)
    target_fraction: float = 0.10
    valid_fraction: float = 0.1
    test_fraction: float = 0.2
    n_monotonic: Optional[int] = None
    n_nonmonotonic: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "patterns", tuple(self.patterns))
        if not 0 < self.target_fraction < 1:
            raise ValidationError("target_fraction must be in (0, 1)")
        if not (0 < self.valid_fraction and 0 < self.test_fraction and self.valid_fraction + self.test_fraction < 1):
            raise ValidationError("valid_fraction and test_fraction must be positive and sum below 1")
        if (self.n_monotonic is None) != (self.n_nonmonotonic is None):
            raise ValidationError("give both n_monotonic and n_nonmonotonic, or neither")

    @property
    def mixed(self) -> bool:
        return self.n_monotonic is not None


def _rng(seed: int, label: str) -> np.random.Generator:
    # stable per-stage streams; labels keep stages independent of each other
    return np.random.default_rng([seed, int.from_bytes(label.encode(), "little") % (2 ** 32)])


def instantiate(spec: PatternSpec, predicates: Sequence[str], rng: np.random.Generator,
                head_pool: Optional[Sequence[str]] = None) -> List[PatternInstance]:
    """``spec.k1`` distinct instances; predicates are drawn uniformly without
    replacement within an instance, the head from ``head_pool`` if given."""
    roles = ROLES[spec.pattern]
    head_role = HEAD_ROLE[spec.pattern]
    preds = sorted(predicates)
    heads = sorted(head_pool) if head_pool is not None else preds
    if len(preds) < len(roles) or not heads:
        raise ValidationError(f"{spec.pattern} needs {len(roles)} distinct predicates")
    out: List[PatternInstance] = []
    seen = set()
    attempts = 0
    while len(out) < spec.k1:
        attempts += 1
        if attempts > 1000 * spec.k1:
            raise ValidationError(f"cannot find {spec.k1} distinct {spec.pattern} instances")
        head = heads[rng.integers(len(heads))]
        others = [p for p in preds if p != head] if spec.pattern != "sym" else []
        body_roles = [r for r in roles if r != head_role]
        if len(others) < len(body_roles):
            raise ValidationError(f"{spec.pattern} needs {len(roles)} distinct predicates")
        picks = rng.choice(len(others), size=len(body_roles), replace=False) if body_roles else []
        inst = PatternInstance(spec.pattern, ((head_role, head),) + tuple(
            (r, others[i]) for r, i in zip(body_roles, picks)))
        if inst not in seen:
            seen.add(inst)
            out.append(inst)
    return out


def augment(d: Dataset, instances: Sequence[PatternInstance], k2: Union[int, Sequence[int]] = 10 ** 9,
            seed: int = 0) -> Tuple[Dataset, List[Rule], Dataset]:
    """Single application of every instance over ``d``.

    Returns the enriched dataset, the Datalog rules of the monotonic
    instances (for auditing) and the new facts alone. When an instance
    derives more than ``k2`` new facts, a uniform sample of ``k2`` is kept.
    """
    caps = [k2] * len(instances) if isinstance(k2, int) else list(k2)
    rng = _rng(seed, "augment")
    added = set()
    rules = []
    for inst, cap in zip(instances, caps):
        new = sorted(inst.consequences(d) - d)
        if len(new) > cap:
            keep = rng.choice(len(new), size=cap, replace=False)
            new = [new[i] for i in sorted(keep)]
        added.update(new)
        if inst.is_monotonic:
            rules.append(inst.rule())
    return frozenset(d | added), rules, frozenset(added)


def split_targets(enriched: Dataset, fraction: float = 0.10, seed: int = 0) -> Tuple[Dataset, Dataset]:
    """Random partition of the binary facts into inputs and targets; unary
    facts always stay in the inputs."""
    if not 0 < fraction < 1:
        raise ValidationError("fraction must be in (0, 1)")
    binary = sorted(f for f in enriched if len(f.args) == 2)
    n_target = int(round(fraction * len(binary)))
    if n_target < 1 or n_target >= len(binary):
        raise ValidationError(f"{len(binary)} binary facts are too few for a {fraction:.0%} target split")
    rng = _rng(seed, "split")
    chosen = set(rng.choice(len(binary), size=n_target, replace=False).tolist())
    targets = frozenset(f for i, f in enumerate(binary) if i in chosen)
    return frozenset(enriched - targets), targets


def gen_negatives(positives: Iterable[Atom], all_splits: Iterable[Dataset], sig: Signature, seed: int = 0,
                  nm_instances: Sequence[PatternInstance] = (), d: Optional[Dataset] = None) -> Dataset:
    """One corrupted fact ``Q(a,b)`` per positive ``P(a,b)``.

    ``Q`` is uniform over the binary predicates other than ``P`` whose
    ``Q(a,b)`` occurs in no split. With ``nm_instances`` (and ``d``), a
    positive ``P(a,b)`` for which ``R(a,b)`` and some ``S(b,c)`` hold in
    ``d`` gets ``T(a,b)`` instead whenever that is a valid corruption, so
    that learning the pattern without its negation is penalised. Positives
    with no valid corruption are skipped.
    """
    preds = sorted(sig.binary_predicates)
    if len(preds) < 2:
        raise ValidationError("predicate corruption needs at least two binary predicates")
    forbidden = set()
    for s in all_splits:
        forbidden.update(s)
    rng = _rng(seed, "negatives")
    nm_heads: Dict[Tuple[str, str], List[str]] = {}
    if nm_instances and d is not None:
        has_s: Dict[str, set] = {}
        for f in d:
            if len(f.args) == 2:
                has_s.setdefault(f.predicate, set()).add(f.args[0])
        for inst in nm_instances:
            r = inst.roles
            for f in d:
                if f.predicate == r["R"] and f.args[1] in has_s.get(r["S"], ()):
                    nm_heads.setdefault(f.args, []).append(r["T"])
    out = set()
    for pos in sorted(positives):
        a, b = pos.args
        preferred = [t for t in sorted(set(nm_heads.get((a, b), ())))
                     if t != pos.predicate and Atom(t, (a, b)) not in forbidden and Atom(t, (a, b)) not in out]
        if preferred:
            out.add(Atom(preferred[rng.integers(len(preferred))], (a, b)))
            continue
        cands = [q for q in preds if q != pos.predicate
                 and Atom(q, (a, b)) not in forbidden and Atom(q, (a, b)) not in out]
        if cands:
            out.add(Atom(cands[rng.integers(len(cands))], (a, b)))
    return frozenset(out)


# ---------------------------------------------------------------- bundles

SPLITS = ("train", "valid", "test")


@dataclass
class Bundle:
    """Everything a training run needs, as written to a data directory."""

    train_input: Dataset
    train_target: Dataset
    valid: Dataset
    test: Dataset
    negatives: Dict[str, Dataset]
    rules: List[Rule]
    signature: Signature
    manifest: dict = field(default_factory=dict)

    @property
    def eval_input(self) -> Dataset:
        """Input for scoring the validation and test splits: the full
        training graph."""
        return frozenset(self.train_input | self.train_target)

    def positives(self, split: str) -> Dataset:
        return {"train": self.train_target, "valid": self.valid, "test": self.test}[split]

    def save(self, directory: Union[str, Path]) -> None:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        write_dataset(out / "train_input.tsv", self.train_input)
        write_dataset(out / "train_target.tsv", self.train_target)
        write_dataset(out / "valid.tsv", self.valid)
        write_dataset(out / "test.tsv", self.test)
        for split in SPLITS:
            write_dataset(out / f"negatives_{split}.tsv", self.negatives.get(split, frozenset()))
        write_rules(out / "rules.dlog", self.rules, header="monotonic rules used to enrich the data")
        manifest = dict(self.manifest)
        manifest["signature"] = self.signature.to_json()
        (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory: Union[str, Path]) -> "Bundle":
        src = Path(directory)
        if not (src / "train_input.tsv").exists():
            raise ValidationError(f"{src}: not a data directory (train_input.tsv missing)")
        manifest = json.loads((src / "manifest.json").read_text(encoding="utf-8")) \
            if (src / "manifest.json").exists() else {}
        parts = {name: read_dataset(src / f"{name}.tsv") for name in ("train_input", "train_target", "valid", "test")}
        negatives = {s: read_dataset(src / f"negatives_{s}.tsv") for s in SPLITS
                     if (src / f"negatives_{s}.tsv").exists()}
        if "signature" in manifest:
            sig = Signature.from_json(manifest["signature"])
        else:
            everything = frozenset().union(*parts.values(), *negatives.values())
            sig = Signature.from_facts(everything)
        rules = read_rules(src / "rules.dlog", sig) if (src / "rules.dlog").exists() else []
        return cls(parts["train_input"], parts["train_target"], parts["valid"], parts["test"],
                   negatives, rules, sig, manifest)


def _take(facts: Sequence[Atom], n: int, rng: np.random.Generator) -> Tuple[List[Atom], List[Atom]]:
    idx = set(rng.choice(len(facts), size=n, replace=False).tolist()) if n else set()
    return [f for i, f in enumerate(facts) if i in idx], [f for i, f in enumerate(facts) if i not in idx]


def build_bundle(d: Dataset, cfg: AugmentConfig = AugmentConfig(), sig: Optional[Signature] = None) -> Bundle:
    """Instantiate patterns, enrich ``d``, split and corrupt.

    Validation and test positives are drawn from the injected consequences;
    the rest of the enriched data is the training set, of which
    ``target_fraction`` becomes training targets. In mixed mode the head
    predicates are partitioned into a monotonic and a non-monotonic pool.
    """
    sig = sig or Signature.from_facts(d)
    preds = list(sig.binary_predicates)
    pools: Dict[str, Optional[List[str]]] = {"mono": None, "nm": None}
    if cfg.mixed:
        if cfg.n_monotonic + cfg.n_nonmonotonic > len(preds):
            raise ValidationError(f"#M + #NM = {cfg.n_monotonic + cfg.n_nonmonotonic} exceeds {len(preds)} predicates")
        order = [preds[i] for i in _rng(cfg.seed, "pools").permutation(len(preds))]
        pools = {"mono": sorted(order[:cfg.n_monotonic]),
                 "nm": sorted(order[cfg.n_monotonic:cfg.n_monotonic + cfg.n_nonmonotonic])}
    rng = _rng(cfg.seed, "instances")
    instances: List[PatternInstance] = []
    caps: List[int] = []
    for spec in cfg.patterns:
        pool = pools["mono"] if spec.pattern in MONOTONIC else pools["nm"]
        new = instantiate(spec, preds, rng, pool)
        instances += new
        caps += [spec.k2] * len(new)
    enriched, rules, added = augment(d, instances, caps, cfg.seed)

    split_rng = _rng(cfg.seed, "heldout")
    added = sorted(added)
    n_valid = max(1, int(round(cfg.valid_fraction * len(added))))
    n_test = max(1, int(round(cfg.test_fraction * len(added))))
    if n_valid + n_test >= len(added):
        raise ValidationError(f"only {len(added)} injected facts; too few for validation and test splits")
    valid, rest = _take(added, n_valid, split_rng)
    test, _ = _take(rest, n_test, split_rng)
    train = frozenset(enriched - set(valid) - set(test))
    train_input, train_target = split_targets(train, cfg.target_fraction, cfg.seed)

    splits = [train, frozenset(valid), frozenset(test)]
    nm = [i for i in instances if not i.is_monotonic]
    negatives = {
        "train": gen_negatives(train_target, splits, sig, cfg.seed + 1, nm, d),
        "valid": gen_negatives(valid, splits, sig, cfg.seed + 2, nm, d),
        "test": gen_negatives(test, splits, sig, cfg.seed + 3, nm, d),
    }
    manifest = {
        "seed": cfg.seed,
        "patterns": [{"pattern": s.pattern, "k1": s.k1, "k2": s.k2} for s in cfg.patterns],
        "instances": [dict(i.to_json(), order=n, pool=("mono" if i.is_monotonic else "nm"))
                      for n, i in enumerate(instances)],
        "pools": pools,
        "target_fraction": cfg.target_fraction,
        "sizes": {"base": len(d), "added": len(added), "train_input": len(train_input),
                  "train_target": len(train_target), "valid": len(valid), "test": len(test)},
    }
    return Bundle(train_input, train_target, frozenset(valid), frozenset(test), negatives, rules, sig, manifest)


def build_mixed(d: Dataset, cfg: AugmentConfig, sig: Optional[Signature] = None) -> Bundle:
    if not cfg.mixed:
        raise ValidationError("mixed datasets need n_monotonic and n_nonmonotonic")
    return build_bundle(d, cfg, sig)


def synthetic_kg(n_constants: int = 100, n_predicates: int = 5, n_facts: int = 400, seed: int = 0) -> Dataset:
    """A random knowledge graph of distinct binary facts without self-loops."""
    if n_constants < 2 or n_predicates < 1:
        raise ValidationError("need at least two constants and one predicate")
    rng = np.random.default_rng(seed)
    width = len(str(n_constants - 1))
    consts = [f"e{i:0{width}d}" for i in range(n_constants)]
    preds = [f"p{i}" for i in range(n_predicates)]
    capacity = n_predicates * n_constants * (n_constants - 1)
    if n_facts > capacity:
        raise ValidationError(f"at most {capacity} distinct facts fit")
    facts = set()
    while len(facts) < n_facts:
        a, b = rng.choice(n_constants, size=2, replace=False)
        facts.add(Atom(preds[rng.integers(n_predicates)], (consts[a], consts[b])))
    return frozenset(facts)
