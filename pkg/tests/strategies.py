"""Random models and datasets shared by the test modules."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from soundgnn.datalog import Atom, Dataset, Signature
from soundgnn.gnn import Layer, SumGnn


def random_matrix(rng: np.random.Generator, rows: int, cols: int, p_zero: float = 0.4,
                  p_neg: float = 0.3, integer: bool = True) -> np.ndarray:
    """Sparse matrix with a controllable share of negative entries; integer
    entries keep forward passes exact."""
    mags = rng.integers(1, 4, size=(rows, cols)).astype(float) if integer else rng.uniform(0.1, 2.0, (rows, cols))
    signs = np.where(rng.random((rows, cols)) < p_neg, -1.0, 1.0)
    return np.where(rng.random((rows, cols)) < p_zero, 0.0, mags * signs)


def random_model(rng: np.random.Generator, delta: Optional[int] = None, n_colours: Optional[int] = None,
                 layers: Optional[int] = None, threshold: float = 0.5, p_neg: Optional[float] = None,
                 integer: bool = True, bias: bool = True) -> SumGnn:
    delta = delta or int(rng.integers(1, 5))
    n_colours = n_colours if n_colours is not None else int(rng.integers(1, 4))
    layers = layers or int(rng.integers(1, 4))
    p_neg = rng.choice([0.0, 0.1, 0.3, 0.6]) if p_neg is None else p_neg
    dims = [delta] + [int(rng.integers(1, 5)) for _ in range(layers - 1)] + [delta]
    colours = tuple(f"E{c}" for c in range(n_colours))
    out = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        A = random_matrix(rng, fan_out, fan_in, p_neg=p_neg, integer=integer)
        B = {c: random_matrix(rng, fan_out, fan_in, p_neg=p_neg, integer=integer) for c in colours}
        b = rng.integers(-1, 2, size=fan_out).astype(float) if bias else np.zeros(fan_out)
        out.append(Layer(A, B, b))
    return SumGnn(tuple(f"U{i}" for i in range(delta)), colours, out, threshold)


def random_dataset(rng: np.random.Generator, sig: Signature, n_constants: int = 6,
                   n_facts: Optional[int] = None, prefix: str = "k") -> Dataset:
    consts = [f"{prefix}{i}" for i in range(n_constants)]
    n_facts = n_facts if n_facts is not None else int(rng.integers(1, 3 * n_constants + 1))
    facts = set()
    for _ in range(n_facts):
        use_unary = sig.unary_predicates and (not sig.binary_predicates or rng.random() < 0.5)
        if use_unary:
            facts.add(Atom(sig.unary_predicates[rng.integers(sig.delta)], (consts[rng.integers(n_constants)],)))
        else:
            r = sig.binary_predicates[rng.integers(len(sig.binary_predicates))]
            facts.add(Atom(r, (consts[rng.integers(n_constants)], consts[rng.integers(n_constants)])))
    return frozenset(facts)


def random_subset(rng: np.random.Generator, d: Dataset) -> Dataset:
    facts = sorted(d)
    keep = rng.random(len(facts)) < rng.uniform(0.2, 0.9)
    return frozenset(f for f, k in zip(facts, keep) if k)


def linkpred_model(rng: np.random.Generator, base: Signature, p_neg: float = 0.0, hidden: int = 3,
                   threshold: float = 0.5) -> SumGnn:
    from soundgnn.codec import LinkSignature

    lifted = LinkSignature.lift(base).lifted
    delta = lifted.delta
    dims = [delta, hidden, delta]
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        A = random_matrix(rng, fan_out, fan_in, p_neg=p_neg)
        B = {c: random_matrix(rng, fan_out, fan_in, p_neg=p_neg) for c in lifted.binary_predicates}
        layers.append(Layer(A, B, np.zeros(fan_out)))
    return SumGnn(lifted.unary_predicates, lifted.binary_predicates, layers, threshold, base)


def two_layer_model(B2: Sequence[Sequence[float]], threshold: float = 0.5) -> SumGnn:
    """Two-layer, two-channel, one-colour model with zero ``A`` and biases,
    ``B_1 = I`` and the given ``B_2``."""
    Z = np.zeros((2, 2))
    return SumGnn(("U1", "U2"), ("c",), [
        Layer(Z, {"c": np.eye(2)}, np.zeros(2)),
        Layer(Z, {"c": np.array(B2, dtype=float)}, np.zeros(2)),
    ], threshold)
