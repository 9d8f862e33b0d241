"""Datalog with inequalities: signatures, facts, rules and the immediate
consequence operator.

Terms are plain strings. A token matching ``[w-z][0-9]*`` is a variable,
anything else is a constant. Datasets are frozensets of ground atoms.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, FrozenSet, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

from .errors import ArityError, RuleSafetyError, RuleSyntaxError, SignatureError, ValidationError

VARIABLE_RE = re.compile(r"[w-z][0-9]*\Z")


def is_variable(term: str) -> bool:
    return VARIABLE_RE.match(term) is not None


@dataclass(frozen=True)
class Signature:
    unary_predicates: Tuple[str, ...] = ()
    binary_predicates: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "unary_predicates", tuple(self.unary_predicates))
        object.__setattr__(self, "binary_predicates", tuple(self.binary_predicates))
        names = self.unary_predicates + self.binary_predicates
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise SignatureError(f"duplicate predicate names: {dupes}")

    @property
    def delta(self) -> int:
        return len(self.unary_predicates)

    def arity(self, predicate: str) -> int:
        if predicate in self.unary_predicates:
            return 1
        if predicate in self.binary_predicates:
            return 2
        raise SignatureError(f"predicate {predicate!r} not in signature")

    def __contains__(self, predicate: str) -> bool:
        return predicate in self.unary_predicates or predicate in self.binary_predicates

    def unary_index(self, predicate: str) -> int:
        try:
            return self.unary_predicates.index(predicate)
        except ValueError:
            raise SignatureError(f"unary predicate {predicate!r} not in signature") from None

    def colour_index(self, predicate: str) -> int:
        try:
            return self.binary_predicates.index(predicate)
        except ValueError:
            raise SignatureError(f"binary predicate {predicate!r} not in signature") from None

    @classmethod
    def from_facts(cls, facts: Iterable["Atom"]) -> "Signature":
        """Infer a signature (names sorted) from the arities used in ``facts``."""
        unary, binary = set(), set()
        for f in facts:
            (unary if len(f.args) == 1 else binary).add(f.predicate)
        clash = unary & binary
        if clash:
            raise ArityError(f"predicates used with two arities: {sorted(clash)}")
        return cls(tuple(sorted(unary)), tuple(sorted(binary)))

    def to_json(self) -> dict:
        return {"unary_predicates": list(self.unary_predicates),
                "binary_predicates": list(self.binary_predicates)}

    @classmethod
    def from_json(cls, obj: dict) -> "Signature":
        return cls(tuple(obj.get("unary_predicates", ())), tuple(obj.get("binary_predicates", ())))


@dataclass(frozen=True, order=True)
class Atom:
    predicate: str
    args: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        if len(self.args) not in (1, 2):
            raise ArityError(f"{self.predicate}: only unary and binary atoms are supported")

    @property
    def is_ground(self) -> bool:
        return not any(is_variable(a) for a in self.args)

    def substitute(self, nu: Dict[str, str]) -> "Atom":
        return Atom(self.predicate, tuple(nu.get(a, a) if is_variable(a) else a for a in self.args))

    def __str__(self):
        return f"{self.predicate}({','.join(self.args)})"


@dataclass(frozen=True, order=True)
class Inequality:
    left: str
    right: str

    @property
    def is_ground(self) -> bool:
        return not (is_variable(self.left) or is_variable(self.right))

    def substitute(self, nu: Dict[str, str]) -> "Inequality":
        return Inequality(nu.get(self.left, self.left), nu.get(self.right, self.right))

    def __str__(self):
        return f"{self.left} != {self.right}"


Literal = Union[Atom, Inequality]
Fact = Atom
Dataset = FrozenSet[Atom]
Substitution = Dict[str, str]


def fact(predicate: str, *args: str) -> Atom:
    f = Atom(predicate, args)
    if not f.is_ground:
        raise ValidationError(f"fact {f} is not ground")
    return f


def dataset(facts: Iterable[Atom] = ()) -> Dataset:
    return frozenset(facts)


def constants(d: Iterable[Atom]) -> List[str]:
    return sorted({a for f in d for a in f.args})


@dataclass(frozen=True)
class Rule:
    body: Tuple[Literal, ...]
    head: Atom

    def __post_init__(self):
        object.__setattr__(self, "body", tuple(self.body))
        _check_rule(self)

    @property
    def body_atoms(self) -> Tuple[Atom, ...]:
        return tuple(b for b in self.body if isinstance(b, Atom))

    @property
    def inequalities(self) -> Tuple[Inequality, ...]:
        return tuple(b for b in self.body if isinstance(b, Inequality))

    @property
    def variables(self) -> Tuple[str, ...]:
        """Variables in order of first occurrence (head first, then body)."""
        seen: Dict[str, None] = {}
        for a in self.head.args:
            if is_variable(a):
                seen.setdefault(a)
        for lit in self.body:
            terms = lit.args if isinstance(lit, Atom) else (lit.left, lit.right)
            for t in terms:
                if is_variable(t):
                    seen.setdefault(t)
        return tuple(seen)

    def __str__(self):
        return format_rule(self)


def _check_rule(r: Rule) -> None:
    bound = {t for a in r.body_atoms for t in a.args if is_variable(t)}
    if not r.body_atoms:
        raise RuleSafetyError("rule has no body atom")
    for t in r.head.args:
        if is_variable(t) and t not in bound:
            raise RuleSafetyError(f"head variable {t} does not occur in a body atom")
    for ineq in r.inequalities:
        if ineq.left == ineq.right:
            raise RuleSafetyError(f"inequality {ineq} mentions the same term twice")
        for t in (ineq.left, ineq.right):
            if is_variable(t) and t not in bound:
                raise RuleSafetyError(f"variable {t} occurs only in an inequality")
    arities: Dict[str, int] = {}
    for a in r.body_atoms + (r.head,):
        if arities.setdefault(a.predicate, len(a.args)) != len(a.args):
            raise ArityError(f"predicate {a.predicate} used with different arities")


def check_rule_signature(r: Rule, sig: Signature) -> None:
    for a in r.body_atoms + (r.head,):
        if sig.arity(a.predicate) != len(a.args):
            raise ArityError(f"{a}: {a.predicate} has arity {sig.arity(a.predicate)}")


# ---------------------------------------------------------------- parsing

_TOKEN_RE = re.compile(r"\s*(?:(?P<arrow>->)|(?P<neq>!=)|(?P<punct>[(),])|(?P<name>(?:[^\s(),!\-]|-(?!>))+))")


def _tokenize(text: str) -> List[Tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise RuleSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self, kind: str, value: Optional[str] = None):
        tok = self.tokens[self.i]
        if tok[0] != kind or (value is not None and tok[1] != value):
            want = value or kind
            got = tok[1] or "end of input"
            raise RuleSyntaxError(f"expected {want!r}, got {got!r}", tok[2])
        self.i += 1
        return tok

    def literal(self) -> Literal:
        name = self.take("name")
        if self.peek()[0] == "neq":
            self.take("neq")
            right = self.take("name")
            return Inequality(name[1], right[1])
        return self.atom_rest(name)

    def atom_rest(self, name) -> Atom:
        self.take("punct", "(")
        args = [self.take("name")[1]]
        while self.peek()[:2] == ("punct", ","):
            self.take("punct", ",")
            args.append(self.take("name")[1])
        close = self.take("punct", ")")
        if len(args) > 2:
            raise ArityError(f"{name[1]}: atoms have at most two arguments (at position {close[2]})")
        return Atom(name[1], tuple(args))

    def rule(self) -> Rule:
        body = [self.literal()]
        while self.peek()[:2] == ("punct", ","):
            self.take("punct", ",")
            body.append(self.literal())
        self.take("arrow")
        head = self.atom_rest(self.take("name"))
        self.take("end")
        return Rule(tuple(body), head)


def parse_rule(text: str, sig: Optional[Signature] = None) -> Rule:
    """Parse ``body -> head``, e.g. ``R(x,y), x != y -> S(x,y)``."""
    r = _Parser(text).rule()
    if sig is not None:
        check_rule_signature(r, sig)
    return r


def format_rule(r: Rule) -> str:
    return f"{', '.join(str(b) for b in r.body)} -> {r.head}"


def parse_program(text: str, sig: Optional[Signature] = None) -> List[Rule]:
    rules = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            rules.append(parse_rule(line, sig))
        except RuleSyntaxError as e:
            raise RuleSyntaxError(f"line {lineno}: {e.message}", e.position) from None
        except ValidationError as e:
            raise type(e)(f"line {lineno}: {e}") from None
    return rules


def read_rules(path: Union[str, Path], sig: Optional[Signature] = None) -> List[Rule]:
    return parse_program(Path(path).read_text(encoding="utf-8"), sig)


def write_rules(path: Union[str, Path], rules: Iterable[Rule], header: str = "") -> None:
    lines = [f"# {h}" for h in header.splitlines()] if header else []
    lines += [format_rule(r) for r in rules]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- datasets on disk

def read_dataset(path: Union[str, Path]) -> Dataset:
    facts = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3) or not all(parts):
                raise ValidationError(f"{path}:{lineno}: expected predicate<TAB>arg1[<TAB>arg2]")
            facts.add(Atom(parts[0], tuple(parts[1:])))
    return frozenset(facts)


def write_dataset(path: Union[str, Path], d: Iterable[Atom]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in sorted(d):
            fh.write("\t".join((f.predicate,) + f.args) + "\n")


# ---------------------------------------------------------------- semantics

def satisfies(d: Dataset, lit: Literal) -> bool:
    if not lit.is_ground:
        raise ValidationError(f"literal {lit} is not ground")
    if isinstance(lit, Inequality):
        return lit.left != lit.right
    return lit in d


def _index(d: Iterable[Atom]) -> Dict[str, List[Tuple[str, ...]]]:
    idx: Dict[str, List[Tuple[str, ...]]] = {}
    for f in d:
        idx.setdefault(f.predicate, []).append(f.args)
    return idx


def matches(r: Rule, d: Iterable[Atom], index=None) -> Iterator[Substitution]:
    """Yield every substitution grounding ``r`` whose body holds in ``d``."""
    idx = index if index is not None else _index(d)
    atoms = r.body_atoms
    ineqs = r.inequalities

    def extend(i: int, nu: Dict[str, str]):
        if i == len(atoms):
            if all(nu.get(q.left, q.left) != nu.get(q.right, q.right) for q in ineqs):
                yield dict(nu)
            return
        atom = atoms[i]
        for args in idx.get(atom.predicate, ()):
            if len(args) != len(atom.args):
                continue
            new = {}
            ok = True
            for term, value in zip(atom.args, args):
                if is_variable(term):
                    bound = nu.get(term, new.get(term))
                    if bound is None:
                        new[term] = value
                    elif bound != value:
                        ok = False
                        break
                elif term != value:
                    ok = False
                    break
            if ok:
                nu.update(new)
                yield from extend(i + 1, nu)
                for k in new:
                    del nu[k]

    yield from extend(0, {})


def rule_consequences(r: Rule, d: Dataset) -> Dataset:
    return frozenset(r.head.substitute(nu) for nu in matches(r, d))


def program_consequences(p: Sequence[Rule], d: Dataset) -> Dataset:
    idx = _index(d)
    out = set()
    for r in p:
        out.update(r.head.substitute(nu) for nu in matches(r, d, idx))
    return frozenset(out)


def iterate(op: Callable[[Dataset], Dataset], d: Dataset, k: int) -> Dataset:
    if k < 1:
        raise ValueError("k must be >= 1")
    for _ in range(k):
        d = op(d)
    return d
