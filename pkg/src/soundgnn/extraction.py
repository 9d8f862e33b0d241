"""Rule enumeration, soundness checking and counterexample construction.

A rule is sound for a model when every fact the rule derives on a dataset is
also derived by the model on that dataset. For a rule whose head channel is
stable or increasing it suffices to check the rule's own body under every
grounding over fresh constants; for a rule whose head channel is unbounded
no rule with that head is sound, and an explicit counterexample dataset is
built by fanning many copies of a probe seed into the head vertex.
"""

from __future__ import annotations

import itertools
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

from .channels import INCREASING, PROVEN_UNBOUNDED, STABLE, ChannelReport, ProbeWitness
from .codec import encode_canonical, encode_linkpred
from .datalog import (Atom, Dataset, Rule, Signature, Substitution, check_rule_signature, format_rule,
                      is_variable, parse_rule, rule_consequences)
from .errors import SearchFailure, StaleReportError, ValidationError
from .gnn import SumGnn, forward, transform, transform_linkpred, transform_many

CANONICAL = "canonical"
LINKPRED = "linkpred"
MODES = (CANONICAL, LINKPRED)

DEFAULT_D_CAP = 2 ** 20

# verdict kinds and their audit labels
SOUND = "sound"
UNSOUND = "unsound"
INAPPLICABLE = "inapplicable"
NO_SOUND_RULES = "no_sound_rules"
STATUS = {SOUND: "SO", UNSOUND: "NG", NO_SOUND_RULES: "NB", INAPPLICABLE: "UNKNOWN"}


# ---------------------------------------------------------------- rule space

@dataclass(frozen=True)
class RuleSpaceConfig:
    """Shape of the enumerated rule space.

    In canonical mode heads are ``U(x)`` for every unary predicate; in
    link-prediction mode heads are ``R(x,y)`` for every binary predicate
    (plus ``R(x,x)`` when ``reflexive_heads`` is set).
    """

    max_body_atoms: int = 2
    variable_pool: Tuple[str, ...] = ("x", "y", "z", "w")
    head_mode: str = CANONICAL
    reflexive_heads: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variable_pool", tuple(self.variable_pool))
        if self.max_body_atoms < 1:
            raise ValidationError("max_body_atoms must be >= 1")
        if self.head_mode not in MODES:
            raise ValidationError(f"head mode must be one of {MODES}")
        pool = self.variable_pool
        if len(set(pool)) != len(pool) or not all(is_variable(v) for v in pool):
            raise ValidationError(f"variable pool must hold distinct variables, got {pool}")
        if len(pool) < (2 if self.head_mode == LINKPRED else 1):
            raise ValidationError("variable pool too small for the head shape")


def canonical_form(body: Sequence[Atom], head: Atom, pool: Sequence[str]) -> Tuple[Atom, ...]:
    """Body reordered and non-head variables renamed so that rules equal up to
    renaming and atom order get the same key."""
    head_vars = {a for a in head.args if is_variable(a)}
    free = [v for v in pool if v not in head_vars]
    best = None
    for perm in itertools.permutations(body):
        names: Dict[str, str] = {}
        renamed = []
        for atom in perm:
            args = []
            for t in atom.args:
                if is_variable(t) and t not in head_vars:
                    if t not in names:
                        names[t] = free[len(names)] if len(names) < len(free) else f"{t}{len(names)}"
                    t = names[t]
                args.append(t)
            renamed.append(Atom(atom.predicate, tuple(args)))
        key = tuple(renamed)
        if best is None or key < best:
            best = key
    return best


def _heads(sig: Signature, cfg: RuleSpaceConfig) -> List[Atom]:
    x = cfg.variable_pool[0]
    if cfg.head_mode == CANONICAL:
        return [Atom(u, (x,)) for u in sig.unary_predicates]
    y = cfg.variable_pool[1]
    heads = []
    for r in sig.binary_predicates:
        heads.append(Atom(r, (x, y)))
        if cfg.reflexive_heads:
            heads.append(Atom(r, (x, x)))
    return heads


def enumerate_rules(sig: Signature, cfg: RuleSpaceConfig = RuleSpaceConfig()) -> Iterator[Rule]:
    """Every safe, inequality-free rule in the configured space, once per
    renaming class, in a deterministic order."""
    pool = cfg.variable_pool
    atoms = [Atom(u, (v,)) for u in sig.unary_predicates for v in pool]
    atoms += [Atom(r, (v1, v2)) for r in sig.binary_predicates for v1 in pool for v2 in pool]
    for head in _heads(sig, cfg):
        need = set(head.args)
        seen = set()
        for n in range(1, cfg.max_body_atoms + 1):
            for combo in itertools.combinations(atoms, n):
                if not need <= {t for a in combo for t in a.args}:
                    continue
                body = canonical_form(combo, head, pool)
                if body in seen:
                    continue
                seen.add(body)
                yield Rule(body, head)


# ---------------------------------------------------------------- groundings

def fresh_constants(r: Rule, n: int) -> List[str]:
    """``n`` constants not occurring in ``r``; zero-padded so that their
    lexicographic order matches their numeric order."""
    used = {t for lit in r.body for t in (lit.args if isinstance(lit, Atom) else (lit.left, lit.right))}
    used |= set(r.head.args)
    width = len(str(n))
    prefix = "c"
    while True:
        names = [f"{prefix}{i:0{width}d}" for i in range(1, n + 1)]
        if not used & set(names):
            return names
        prefix += "c"


def _body_under(r: Rule, nu: Substitution) -> Dataset:
    return frozenset(a.substitute(nu) for a in r.body_atoms)


def _inequalities_hold(r: Rule, nu: Substitution) -> bool:
    return all(q.substitute(nu).left != q.substitute(nu).right for q in r.inequalities)


def ground_rule(r: Rule) -> List[Tuple[Substitution, Dataset]]:
    """Every grounding of ``r`` over one fresh constant per variable that
    satisfies the rule's inequalities, with the grounded body."""
    vs = r.variables
    consts = fresh_constants(r, len(vs))
    out = []
    for image in itertools.product(consts, repeat=len(vs)):
        nu = dict(zip(vs, image))
        if _inequalities_hold(r, nu):
            out.append((nu, _body_under(r, nu)))
    return out


def _pattern(image: Tuple[str, ...], ordered: bool) -> Tuple[int, ...]:
    if ordered:
        ranks = {c: i for i, c in enumerate(sorted(set(image)))}
        return tuple(ranks[c] for c in image)
    first: Dict[str, int] = {}
    return tuple(first.setdefault(c, len(first)) for c in image)


def representative_groundings(r: Rule, mode: str) -> List[Tuple[Substitution, Dataset]]:
    """One grounding per equivalence class of ``ground_rule(r)``.

    Canonical transformations commute with any renaming of constants, so
    groundings with the same equality pattern behave identically. The
    link-prediction encoding also depends on the order of constants, so
    there the class is the pattern of relative order.
    """
    out, seen = [], set()
    vs = r.variables
    for nu, d in ground_rule(r):
        key = _pattern(tuple(nu[v] for v in vs), ordered=(mode == LINKPRED))
        if key not in seen:
            seen.add(key)
            out.append((nu, d))
    return out


# ---------------------------------------------------------------- verdicts

@dataclass
class SoundnessVerdict:
    """Outcome of a soundness check.

    ``unsound`` carries the failing grounding and its body dataset;
    ``no_sound_rules`` carries a counterexample dataset (over the lifted
    signature in link-prediction mode, with ``caveat`` set), the fan-in
    ``d`` and the head fact at the level of the dataset.
    """

    rule: Rule
    kind: str
    substitution: Optional[Substitution] = None
    dataset: Optional[Dataset] = None
    head_fact: Optional[Atom] = None
    d: Optional[int] = None
    channel: Optional[str] = None
    caveat: bool = False
    reason: str = ""

    @property
    def status(self) -> str:
        return STATUS[self.kind]

    @property
    def is_sound(self) -> bool:
        return self.kind == SOUND

    def to_json(self) -> dict:
        obj = {"rule": format_rule(self.rule), "verdict": self.kind, "status": self.status}
        if self.substitution is not None:
            obj["substitution"] = dict(self.substitution)
        if self.dataset is not None:
            obj["dataset"] = [str(f) for f in sorted(self.dataset)]
        if self.head_fact is not None:
            obj["head"] = str(self.head_fact)
        if self.d is not None:
            obj["d"] = self.d
        if self.channel is not None:
            obj["channel"] = self.channel
        if self.kind == NO_SOUND_RULES:
            obj["caveat"] = self.caveat
        if self.reason:
            obj["reason"] = self.reason
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "SoundnessVerdict":
        def atom(text: str) -> Atom:
            pred, rest = text.split("(", 1)
            return Atom(pred, tuple(rest.rstrip(")").split(",")))

        return cls(
            parse_rule(obj["rule"]), obj["verdict"], obj.get("substitution"),
            frozenset(atom(f) for f in obj["dataset"]) if "dataset" in obj else None,
            atom(obj["head"]) if "head" in obj else None, obj.get("d"), obj.get("channel"),
            obj.get("caveat", False), obj.get("reason", ""))


def _head_channels(m: SumGnn, r: Rule, mode: str) -> List[Tuple[str, bool]]:
    """Output channels the head can land on, with whether the channel is the
    backward one (``B_R``) in link-prediction mode."""
    if mode == CANONICAL:
        check_rule_signature(r, m.signature)
        if len(r.head.args) != 1:
            raise ValidationError(f"canonical mode needs a unary head, got {r.head}")
        return [(r.head.predicate, False)]
    ls = m.link_signature
    check_rule_signature(r, ls.base)
    if len(r.head.args) != 2:
        raise ValidationError(f"link-prediction mode needs a binary head, got {r.head}")
    chans = [(ls.forward(r.head.predicate), False)]
    if r.head.args[0] != r.head.args[1]:
        chans.append((ls.backward(r.head.predicate), True))
    return chans


def _heads_cooccur(r: Rule) -> bool:
    want = sorted(r.head.args)
    return any(len(a.args) == 2 and sorted(a.args) == want for a in r.body_atoms)


def _injective(r: Rule, backward: bool = False) -> Substitution:
    vs = r.variables
    consts = fresh_constants(r, len(vs))
    nu = dict(zip(vs, consts))
    x, y = r.head.args[0], r.head.args[-1]
    if backward and x != y and is_variable(x) and is_variable(y):
        nu[x], nu[y] = nu[y], nu[x]
    return nu


def _transform_fn(m: SumGnn, mode: str):
    return transform if mode == CANONICAL else transform_linkpred


def check_soundness(m: SumGnn, r: Rule, report: ChannelReport, mode: str = CANONICAL,
                    d_cap: int = DEFAULT_D_CAP) -> SoundnessVerdict:
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}")
    if report.fingerprint != m.fingerprint():
        raise StaleReportError("channel report was computed for a different model")
    chans = _head_channels(m, r, mode)
    index = {name: i for i, name in enumerate(m.unary_predicates)}

    if mode == LINKPRED and not _heads_cooccur(r):
        nu = _injective(r)
        return SoundnessVerdict(r, UNSOUND, nu, _body_under(r, nu), r.head.substitute(nu),
                                reason="head variables share no body atom, so no pair vertex exists")

    if all(report.mono[-1][index[c]] in (STABLE, INCREASING) for c, _ in chans):
        groundings = representative_groundings(r, mode)
        outs = transform_many(m, [d for _, d in groundings], linkpred=(mode == LINKPRED))
        for (nu, d), out in zip(groundings, outs):
            h = r.head.substitute(nu)
            if h not in out:
                return SoundnessVerdict(r, UNSOUND, nu, d, h)
        return SoundnessVerdict(r, SOUND)

    for c, backward in chans:
        p = index[c]
        if report.unbounded[p] == PROVEN_UNBOUNDED and p in report.witnesses:
            try:
                cx = construct_counterexample(m, p, report.witnesses[p], r, mode, backward, d_cap)
            except SearchFailure as e:
                return SoundnessVerdict(r, INAPPLICABLE, channel=c, reason=str(e))
            except ValidationError as e:
                return SoundnessVerdict(r, INAPPLICABLE, channel=c, reason=str(e))
            return SoundnessVerdict(r, NO_SOUND_RULES, cx.substitution, cx.dataset, cx.head_fact, cx.d,
                                    c, caveat=(mode == LINKPRED))
    classes = ", ".join(f"{c}: {report.mono[-1][index[c]]}" for c, _ in chans)
    return SoundnessVerdict(r, INAPPLICABLE, reason=f"head channel not monotone and not witnessed unbounded ({classes})")


# ---------------------------------------------------------------- counterexamples

@dataclass
class Counterexample:
    dataset: Dataset
    d: int
    head_fact: Atom
    substitution: Substitution
    value: float


def _fresh_name(base: str, taken: set) -> str:
    name = base
    while name in taken:
        name = "_" + name
    return name


def construct_counterexample(m: SumGnn, p: int, witness: ProbeWitness, r: Rule, mode: str = CANONICAL,
                             backward: bool = False, d_cap: int = DEFAULT_D_CAP) -> Counterexample:
    """Smallest power-of-two fan-in ``d`` for which the head fact is derived
    by ``r`` but not by the model.

    The dataset extends the injectively grounded body with ``d`` fan vertices
    carrying the witness seed, joined to the head vertex by a path coloured
    with the witness colours.
    """
    if any(layer.activation != "relu" for layer in m.layers[:-1]):
        raise ValidationError("counterexample construction needs ReLU hidden layers")
    if m.threshold <= 0:
        raise ValidationError(f"threshold {m.threshold} <= 0: every output value reaches it")
    if witness.final[p] >= 0:
        raise ValidationError(f"witness does not drive channel {p} negative")
    if len(witness.colours) != m.num_layers:
        raise ValidationError("witness colour sequence does not match the model depth")

    nu = _injective(r, backward)
    body = _body_under(r, nu)
    if mode == CANONICAL:
        if r.head.predicate != m.unary_predicates[p]:
            raise ValidationError(f"rule head {r.head.predicate} is not channel {m.unary_predicates[p]}")
        base = body
        a = nu.get(r.head.args[0], r.head.args[0])
    else:
        ls = m.link_signature
        base, _ = encode_linkpred(body, ls.base)
        hx, hy = (nu.get(t, t) for t in r.head.args)
        a, pred = ls.channel_of(hx, r.head.predicate, hy)
        if pred != m.unary_predicates[p]:
            raise ValidationError(f"grounded head lands on {pred}, not on channel {m.unary_predicates[p]}")
    head_fact = Atom(m.unary_predicates[p], (a,))

    taken = {t for f in base for t in f.args}
    L = m.num_layers
    chain = [_fresh_name(f"chain{l}", taken) for l in range(1, L)]
    seed_preds = [m.unary_predicates[k] for k, bit in enumerate(witness.y0) if bit]
    sig = m.signature

    d = 1
    while d <= d_cap:
        fans = [_fresh_name(f"fan{j}", taken) for j in range(1, d + 1)]
        facts = set(base)
        first_target = chain[0] if chain else a
        for u in fans:
            facts.add(Atom(witness.colours[0], (u, first_target)))
            facts.update(Atom(q, (u,)) for q in seed_preds)
        for l in range(1, L - 1):
            facts.add(Atom(witness.colours[l], (chain[l - 1], chain[l])))
        if chain:
            facts.add(Atom(witness.colours[-1], (chain[-1], a)))
        data = frozenset(facts)
        g = encode_canonical(data, sig)
        value = float(forward(m, g).output[g.vertex_index()[a], p])
        if value < m.threshold:
            return Counterexample(data, d, head_fact, nu, value)
        d *= 2
    raise SearchFailure(f"no counterexample with fan-in up to {d_cap} for channel {m.unary_predicates[p]}")


# ---------------------------------------------------------------- replay

def replay(m: SumGnn, v: SoundnessVerdict, mode: str = CANONICAL) -> bool:
    """True iff the verdict's witness is a genuine violation: the rule derives
    the head fact but the model does not."""
    r = v.rule
    if v.kind == UNSOUND:
        h = r.head.substitute(v.substitution)
        return h in rule_consequences(r, v.dataset) and h not in _transform_fn(m, mode)(m, v.dataset)
    if v.kind == NO_SOUND_RULES:
        if v.head_fact in transform(m, v.dataset):
            return False
        if mode == CANONICAL:
            return v.head_fact in rule_consequences(r, v.dataset)
        body = _body_under(r, v.substitution)
        lifted, _ = encode_linkpred(body, m.link_signature.base)
        return r.head.substitute(v.substitution) in rule_consequences(r, body) and lifted <= v.dataset
    raise ValidationError(f"verdict {v.kind} carries no witness")


# ---------------------------------------------------------------- extraction

@dataclass
class ExtractionResult:
    sound_rules: List[Rule]
    counts: Dict[str, int]
    verdicts: List[SoundnessVerdict]
    injected: List[SoundnessVerdict] = field(default_factory=list)

    def injected_percentages(self) -> Dict[str, float]:
        n = len(self.injected)
        if n == 0:
            return {"pct_so": 0.0, "pct_ng": 0.0, "pct_nb": 0.0}
        tally = {s: sum(v.status == s for v in self.injected) for s in ("SO", "NG", "NB")}
        return {f"pct_{s.lower()}": 100.0 * c / n for s, c in tally.items()}

    def to_json(self) -> dict:
        return {
            "counts": dict(self.counts),
            "injected": [v.to_json() for v in self.injected],
            "injected_percentages": self.injected_percentages(),
            "verdicts": [v.to_json() for v in self.verdicts],
        }


def _check_chunk(args) -> List[SoundnessVerdict]:
    m, rules, report, mode, d_cap = args
    return [check_soundness(m, r, report, mode, d_cap) for r in rules]


def resolve_jobs(jobs: Optional[int] = None) -> int:
    if jobs is None:
        raw = os.environ.get("SOUNDGNN_JOBS", "1")
        try:
            jobs = int(raw)
        except ValueError:
            raise ValidationError(f"SOUNDGNN_JOBS must be an integer, got {raw!r}") from None
    if jobs < 1:
        raise ValidationError("jobs must be >= 1")
    return jobs


def check_many(m: SumGnn, rules: Sequence[Rule], report: ChannelReport, mode: str = CANONICAL,
               jobs: Optional[int] = None, d_cap: int = DEFAULT_D_CAP) -> List[SoundnessVerdict]:
    """Check rules independently, optionally across worker processes; the
    result order follows ``rules`` regardless of ``jobs``."""
    jobs = resolve_jobs(jobs)
    rules = list(rules)
    if jobs == 1 or len(rules) < 2 * jobs:
        return _check_chunk((m, rules, report, mode, d_cap))
    size = -(-len(rules) // (4 * jobs))
    chunks = [(m, rules[i:i + size], report, mode, d_cap) for i in range(0, len(rules), size)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return [v for part in pool.map(_check_chunk, chunks) for v in part]


def extract_all_sound(m: SumGnn, report: ChannelReport, cfg: RuleSpaceConfig = RuleSpaceConfig(),
                      injected: Iterable[Rule] = (), jobs: Optional[int] = None,
                      d_cap: int = DEFAULT_D_CAP) -> ExtractionResult:
    mode = cfg.head_mode
    sig = m.signature if mode == CANONICAL else m.link_signature.base
    rules = list(enumerate_rules(sig, cfg))
    verdicts = check_many(m, rules, report, mode, jobs, d_cap)
    sound = [v.rule for v in verdicts if v.is_sound]
    counts = {f"#{n}B": sum(len(r.body_atoms) == n for r in sound) for n in range(1, cfg.max_body_atoms + 1)}
    audit = check_many(m, list(injected), report, mode, 1, d_cap)
    return ExtractionResult(sound, counts, verdicts, audit)
