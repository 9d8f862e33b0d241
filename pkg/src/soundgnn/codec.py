"""Dataset <-> coloured graph encodings.

The canonical scheme maps constants to vertices, binary predicates to edge
colours and unary predicates to feature channels. The link-prediction
scheme first rewrites a dataset so that every pair of constants that occur
together in a binary fact gets its own *pair constant*; binary facts then
become unary facts on pair constants (``F_R`` for ``R(a,b)`` read in
canonical order, ``B_R`` for the reverse direction) and can be read off the
output channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
from scipy import sparse

from .datalog import Atom, Dataset, Signature
from .errors import SignatureError, ValidationError

PAIR_PREFIX = "__pair__"
LINK_COLOURS = ("first", "second", "first_inv", "second_inv")


@dataclass
class ColGraph:
    """A (Col, delta)-graph with vertices in a fixed (sorted) order.

    ``edges[c]`` is an ``(m, 2)`` integer array of ``(source, target)``
    vertex indices; ``labels`` is ``(n, delta)``.
    """

    vertices: Tuple[str, ...]
    colours: Tuple[str, ...]
    edges: Dict[str, np.ndarray]
    labels: np.ndarray
    _adjacency: Dict[str, sparse.csr_matrix] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.vertices = tuple(self.vertices)
        self.colours = tuple(self.colours)
        n = len(self.vertices)
        self.labels = np.asarray(self.labels, dtype=float)
        if self.labels.ndim != 2 or self.labels.shape[0] != n:
            raise ValidationError(f"labels must have shape ({n}, delta), got {self.labels.shape}")
        for c in self.colours:
            e = np.asarray(self.edges.get(c, np.zeros((0, 2), dtype=np.int64)), dtype=np.int64).reshape(-1, 2)
            if e.size and (e.min() < 0 or e.max() >= n):
                raise ValidationError(f"colour {c}: edge endpoint is not a vertex")
            # sorted by (target, source) so aggregation order is fixed
            order = np.lexsort((e[:, 0], e[:, 1])) if len(e) else np.arange(0)
            self.edges[c] = e[order]
        unknown = set(self.edges) - set(self.colours)
        if unknown:
            raise ValidationError(f"edges use undeclared colours {sorted(unknown)}")

    @property
    def delta(self) -> int:
        return self.labels.shape[1]

    @property
    def is_boolean(self) -> bool:
        return bool(np.all((self.labels == 0) | (self.labels == 1)))

    def vertex_index(self) -> Dict[str, int]:
        return {v: i for i, v in enumerate(self.vertices)}

    def adjacency(self, colour: str) -> sparse.csr_matrix:
        """``M[v, u] = #edges (u, v)`` so that ``M @ H`` sums in-neighbours."""
        if colour not in self._adjacency:
            n = len(self.vertices)
            e = self.edges.get(colour, np.zeros((0, 2), dtype=np.int64))
            m = sparse.csr_matrix((np.ones(len(e)), (e[:, 1], e[:, 0])), shape=(n, n))
            m.sum_duplicates()
            m.sort_indices()
            self._adjacency[colour] = m
        return self._adjacency[colour]


def _check_reserved(d: Iterable[Atom]) -> None:
    for f in d:
        for a in f.args:
            if a.startswith(PAIR_PREFIX):
                raise ValidationError(f"constant {a!r} uses the reserved prefix {PAIR_PREFIX!r}")


def encode_canonical(d: Dataset, sig: Signature) -> ColGraph:
    verts = tuple(sorted({a for f in d for a in f.args}))
    index = {v: i for i, v in enumerate(verts)}
    labels = np.zeros((len(verts), sig.delta))
    edges: Dict[str, list] = {c: [] for c in sig.binary_predicates}
    for f in d:
        if f.predicate not in sig:
            raise SignatureError(f"predicate {f.predicate!r} not in signature")
        if sig.arity(f.predicate) != len(f.args):
            raise SignatureError(f"{f}: wrong arity for {f.predicate}")
        if len(f.args) == 1:
            labels[index[f.args[0]], sig.unary_index(f.predicate)] = 1.0
        else:
            edges[f.predicate].append((index[f.args[0]], index[f.args[1]]))
    return ColGraph(verts, sig.binary_predicates,
                    {c: np.array(e, dtype=np.int64).reshape(-1, 2) for c, e in edges.items()}, labels)


def decode_canonical(g: ColGraph, sig: Signature) -> Dataset:
    if not g.is_boolean:
        raise ValidationError("cannot decode a non-Boolean graph")
    if g.delta != sig.delta:
        raise SignatureError(f"graph has {g.delta} channels, signature has {sig.delta} unary predicates")
    facts = set()
    rows, cols = np.nonzero(g.labels == 1)
    for v, p in zip(rows, cols):
        facts.add(Atom(sig.unary_predicates[p], (g.vertices[v],)))
    for c in g.colours:
        for u, v in g.edges[c]:
            facts.add(Atom(c, (g.vertices[u], g.vertices[v])))
    return frozenset(facts)


# ---------------------------------------------------------------- link prediction

def pair_constant(a: str, b: str) -> str:
    first, second = (a, b) if a <= b else (b, a)
    return f"{PAIR_PREFIX}{first}__{second}"


@dataclass(frozen=True)
class LinkSignature:
    """An original signature together with its lifted counterpart."""

    base: Signature
    lifted: Signature

    @classmethod
    def lift(cls, base: Signature) -> "LinkSignature":
        unary = base.unary_predicates \
            + tuple(f"F_{r}" for r in base.binary_predicates) \
            + tuple(f"B_{r}" for r in base.binary_predicates)
        clash = set(LINK_COLOURS) & set(base.unary_predicates)
        if clash:
            raise SignatureError(f"predicate names reserved for link colours: {sorted(clash)}")
        return cls(base, Signature(unary, LINK_COLOURS))

    def forward(self, r: str) -> str:
        self.base.colour_index(r)
        return f"F_{r}"

    def backward(self, r: str) -> str:
        self.base.colour_index(r)
        return f"B_{r}"

    def channel_of(self, a: str, r: str, b: str) -> Tuple[str, str]:
        """Pair constant and lifted predicate carrying ``r(a, b)``."""
        if a <= b:
            return pair_constant(a, b), self.forward(r)
        return pair_constant(a, b), self.backward(r)

    def decode_predicate(self, p: str) -> Optional[Tuple[str, bool]]:
        """``(R, is_forward)`` for a lifted ``F_R``/``B_R`` name, else ``None``."""
        if p in self.base.unary_predicates:
            return None
        for prefix, fwd in (("F_", True), ("B_", False)):
            if p.startswith(prefix) and p[2:] in self.base.binary_predicates:
                return p[2:], fwd
        return None


def encode_linkpred(d: Dataset, sig: Optional[Signature] = None) -> Tuple[Dataset, LinkSignature]:
    """Rewrite ``d`` over the lifted signature.

    For ``R(a,a)`` only ``F_R`` is emitted on the reflexive pair constant.
    """
    _check_reserved(d)
    if sig is None:
        sig = Signature.from_facts(d)
    ls = LinkSignature.lift(sig)
    out = set()
    pairs: Dict[str, Tuple[str, str]] = {}
    for f in d:
        if len(f.args) == 1:
            sig.unary_index(f.predicate)
            out.add(f)
            continue
        a, b = f.args
        p, pred = ls.channel_of(a, f.predicate, b)
        first, second = (a, b) if a <= b else (b, a)
        if pairs.setdefault(p, (first, second)) != (first, second):
            raise ValidationError(f"constants {first!r}, {second!r} collide with another pair name")
        out.update((
            Atom(pred, (p,)),
            Atom("first", (p, first)),
            Atom("second", (p, second)),
            Atom("first_inv", (first, p)),
            Atom("second_inv", (second, p)),
        ))
    return frozenset(out), ls


def decode_linkpred(d_out: Dataset, ls: LinkSignature) -> Dataset:
    firsts: Dict[str, str] = {}
    seconds: Dict[str, str] = {}
    for f in d_out:
        if f.predicate == "first":
            firsts[f.args[0]] = f.args[1]
        elif f.predicate == "second":
            seconds[f.args[0]] = f.args[1]
    out = set()
    for f in d_out:
        if len(f.args) != 1:
            continue
        decoded = ls.decode_predicate(f.predicate)
        if decoded is None:
            continue
        c = f.args[0]
        if not c.startswith(PAIR_PREFIX):
            continue
        if c not in firsts or c not in seconds:
            raise ValidationError(f"pair constant {c!r} has no link facts")
        r, fwd = decoded
        a, b = firsts[c], seconds[c]
        out.add(Atom(r, (a, b) if fwd else (b, a)))
    return frozenset(out)
