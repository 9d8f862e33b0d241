"""Training sum-GNNs with binary cross-entropy and Adam.

Gradients are computed by hand, layer by layer, from the intermediates kept
by :func:`soundgnn.gnn.forward`. A training target is a fact whose
(vertex, channel) position is read from the output layer; its score is
``logistic(v_L[vertex, channel])``.

Three paradigms differ only in what happens after the optimizer step:

* ``rgcn``: nothing;
* ``mgcn``: negative matrix weights are clamped to zero after every step;
* ``rx``: after every epoch, the smallest magnitude threshold that makes
  more than ``X`` percent of output channels stable or increasing is
  computed, and every weight at or below it is zeroed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .channels import INCREASING, STABLE, classify_monotonicity, classify_safe, unbounded_sampled
from .codec import ColGraph, LinkSignature, encode_canonical, encode_linkpred
from .datalog import Atom, Dataset, Signature
from .errors import TrainingDiverged, ValidationError
from .gnn import Layer, SumGnn, forward

PARADIGMS = ("rgcn", "mgcn", "rx")
HISTORY_COLUMNS = ("epoch", "loss", "pct_safe", "pct_stable", "pct_inc", "pct_unbounded_sampled")
THRESHOLD_GRID = tuple(i / 109 for i in range(1, 109))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    paradigm: str = "rgcn"
    x: Optional[float] = None
    patience: int = 50
    seed: int = 0
    hidden_multiplier: int = 2
    layers: int = 2
    history_samples: int = 100

    def __post_init__(self):
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be > 0")
        if self.paradigm not in PARADIGMS:
            raise ValidationError(f"paradigm must be one of {PARADIGMS}")
        if self.paradigm == "rx":
            if self.x is None or not 0 <= self.x <= 100:
                raise ValidationError("rx paradigm needs x in [0, 100]")
        if self.patience < 1:
            raise ValidationError("patience must be >= 1")
        if self.layers < 1 or self.hidden_multiplier < 1:
            raise ValidationError("layers and hidden_multiplier must be >= 1")


@dataclass(frozen=True)
class TrainExample:
    """An input dataset with labelled target facts.

    In link-prediction mode the targets are binary facts; in canonical mode
    they are unary facts.
    """

    input: Dataset
    positives: Dataset
    negatives: Dataset
    mode: str = "linkpred"

    def __post_init__(self):
        for name in ("input", "positives", "negatives"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))
        clash = self.positives & self.negatives
        if clash:
            raise ValidationError(f"facts labelled both positive and negative: {sorted(map(str, clash))[:3]}")
        arity = 2 if self.mode == "linkpred" else 1
        for f in self.positives | self.negatives:
            if len(f.args) != arity:
                raise ValidationError(f"target {f} has the wrong arity for {self.mode} mode")


@dataclass
class EncodedExample:
    """A :class:`TrainExample` compiled against a model's signature.

    ``rows``/``cols`` locate each target in the output matrix; targets whose
    vertex does not exist have ``present`` false, are left out of the loss
    and always score zero.
    """

    graph: ColGraph
    facts: Tuple[Atom, ...]
    labels: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    present: np.ndarray

    @property
    def loss_rows(self) -> np.ndarray:
        return self.rows[self.present]

    @property
    def loss_cols(self) -> np.ndarray:
        return self.cols[self.present]

    @property
    def loss_labels(self) -> np.ndarray:
        return self.labels[self.present]


def encode_example(m: SumGnn, ex: TrainExample) -> EncodedExample:
    facts = tuple(sorted(ex.positives)) + tuple(sorted(ex.negatives))
    labels = np.array([1.0] * len(ex.positives) + [0.0] * len(ex.negatives))
    if ex.mode == "linkpred":
        ls = m.link_signature
        lifted, _ = encode_linkpred(ex.input, ls.base)
        g = encode_canonical(lifted, ls.lifted)
        located = [ls.channel_of(f.args[0], f.predicate, f.args[1]) for f in facts]
    else:
        g = encode_canonical(ex.input, m.signature)
        located = [(f.args[0], f.predicate) for f in facts]
    vindex = g.vertex_index()
    cindex = {p: i for i, p in enumerate(m.unary_predicates)}
    rows = np.array([vindex.get(v, -1) for v, _ in located], dtype=np.int64)
    cols = np.array([cindex[p] for _, p in located], dtype=np.int64)
    return EncodedExample(g, facts, labels, rows, cols, rows >= 0)


def _as_encoded(m: SumGnn, ex) -> EncodedExample:
    return ex if isinstance(ex, EncodedExample) else encode_example(m, ex)


# ---------------------------------------------------------------- parameters

def parameters(m: SumGnn) -> List[np.ndarray]:
    """Trainable arrays in a fixed order: per layer ``A``, ``B`` by model
    colour order, then ``b``. The arrays are the model's own."""
    out = []
    for layer in m.layers:
        out.append(layer.A)
        out.extend(layer.B[c] for c in m.colours)
        out.append(layer.b)
    return out


def init_model(sig: Signature, cfg: TrainConfig = TrainConfig(), linkpred: bool = True) -> SumGnn:
    """Random model over ``sig`` (lifted first when ``linkpred``), matrices
    uniform in ``+-1/sqrt(fan_in)``, zero biases."""
    rng = np.random.default_rng(cfg.seed)
    if linkpred:
        ls = LinkSignature.lift(sig)
        unary, colours, base = ls.lifted.unary_predicates, ls.lifted.binary_predicates, sig
    else:
        unary, colours, base = sig.unary_predicates, sig.binary_predicates, None
    delta = len(unary)
    if delta == 0:
        raise ValidationError("signature has no channels")
    dims = [delta] + [cfg.hidden_multiplier * delta] * (cfg.layers - 1) + [delta]
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        A = rng.uniform(-bound, bound, (fan_out, fan_in))
        B = {c: rng.uniform(-bound, bound, (fan_out, fan_in)) for c in colours}
        layers.append(Layer(A, B, np.zeros(fan_out)))
    return SumGnn(unary, colours, layers, threshold=0.5, base_signature=base)


# ---------------------------------------------------------------- loss

def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def loss_and_grads(m: SumGnn, ex: Union[TrainExample, EncodedExample]) -> Tuple[float, List[np.ndarray]]:
    """Mean binary cross-entropy of ``logistic(v_L)`` at the targets and its
    gradient, in :func:`parameters` order."""
    enc = _as_encoded(m, ex)
    trace = forward(m, enc.graph, keep_intermediates=True)
    rows, cols, y = enc.loss_rows, enc.loss_cols, enc.loss_labels
    grads = [np.zeros_like(p) for p in parameters(m)]
    if len(y) == 0:
        return 0.0, grads
    x = trace.output[rows, cols]
    loss = float(np.mean(_softplus(x) - y * x))
    if not math.isfinite(loss):
        raise TrainingDiverged(f"loss is {loss}")
    upstream = np.zeros_like(trace.output)
    np.add.at(upstream, (rows, cols), (_sigmoid(x) - y) / len(y))

    k = len(m.colours)
    per_layer = k + 2
    for l in range(m.num_layers - 1, -1, -1):
        layer = m.layers[l]
        dz = upstream * layer.activation_grad(trace.pre_activations[l])
        h_prev = trace.values[l]
        base = l * per_layer
        grads[base] = dz.T @ h_prev
        aggs = trace.aggregates[l]
        for ci, c in enumerate(m.colours):
            if c in aggs:
                grads[base + 1 + ci] = dz.T @ aggs[c]
        grads[base + per_layer - 1] = dz.sum(axis=0)
        if l > 0:
            upstream = dz @ layer.A
            for c in aggs:
                upstream = upstream + enc.graph.adjacency(c).T @ (dz @ layer.B[c])
    return loss, grads


def loss_only(m: SumGnn, ex: Union[TrainExample, EncodedExample]) -> float:
    enc = _as_encoded(m, ex)
    y = enc.loss_labels
    if len(y) == 0:
        return 0.0
    x = forward(m, enc.graph).output[enc.loss_rows, enc.loss_cols]
    return float(np.mean(_softplus(x) - y * x))


def scores(m: SumGnn, ex: Union[TrainExample, EncodedExample]) -> np.ndarray:
    """``logistic(v_L)`` per target; targets without a vertex score 0."""
    enc = _as_encoded(m, ex)
    out = np.zeros(len(enc.facts))
    if enc.present.any():
        x = forward(m, enc.graph).output[enc.loss_rows, enc.loss_cols]
        out[enc.present] = _sigmoid(x)
    return out


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(m: SumGnn, grads: Sequence[np.ndarray], state: AdamState, lr: float = 0.001,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> Tuple[SumGnn, AdamState]:
    """One bias-corrected Adam update, applied to ``m`` in place."""
    params = parameters(m)
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValidationError("gradient / optimizer state does not match the model")
    state.step += 1
    c1 = 1 - beta1 ** state.step
    c2 = 1 - beta2 ** state.step
    for p, g, mom, vel in zip(params, grads, state.m, state.v):
        mom *= beta1
        mom += (1 - beta1) * g
        vel *= beta2
        vel += (1 - beta2) * g * g
        p -= lr * (mom / c1) / (np.sqrt(vel / c2) + eps)
    return m, state


# ---------------------------------------------------------------- clamping

def clamp_negative(m: SumGnn) -> SumGnn:
    """Zero every negative matrix weight in place; biases are untouched."""
    for layer in m.layers:
        for w in layer.matrices():
            np.maximum(w, 0.0, out=w)
    return m


def clamp_threshold(m: SumGnn, tau: float) -> SumGnn:
    """Zero every matrix weight with ``|w| <= tau`` in place."""
    if tau < 0:
        raise ValidationError("tau must be >= 0")
    for layer in m.layers:
        for w in layer.matrices():
            w[np.abs(w) <= tau] = 0.0
    return m


def _clamped(m: SumGnn, tau: float) -> SumGnn:
    layers = [Layer(np.where(np.abs(l.A) <= tau, 0.0, l.A),
                    {c: np.where(np.abs(w) <= tau, 0.0, w) for c, w in l.B.items()},
                    l.b, l.activation, l.cap) for l in m.layers]
    return SumGnn(m.unary_predicates, m.colours, layers, m.threshold, m.base_signature)


def pct_monotone_output(m: SumGnn) -> float:
    out = classify_monotonicity(m)[-1]
    return 100.0 * sum(c in (STABLE, INCREASING) for c in out) / len(out)


def _tau_candidates(m: SumGnn) -> np.ndarray:
    mags = np.concatenate([np.abs(w).ravel() for w in m.matrices()])
    return np.concatenate([[0.0], np.unique(mags[mags > 0])])


def compute_tau_X(m: SumGnn, x: float) -> float:
    """Smallest clamping threshold giving more than ``x`` percent stable or
    increasing output channels (``max|w|`` if none does).

    Zeroing weights can only move a channel towards stable (stable below
    increasing/decreasing below undetermined), so the percentage is
    monotone in the threshold and a binary search over the candidates finds
    the same answer as a linear scan.
    """
    if not 0 <= x <= 100:
        raise ValidationError("x must be in [0, 100]")
    cands = _tau_candidates(m)
    lo, hi = 0, len(cands)
    while lo < hi:
        mid = (lo + hi) // 2
        if pct_monotone_output(_clamped(m, cands[mid])) > x:
            hi = mid
        else:
            lo = mid + 1
    return float(cands[lo]) if lo < len(cands) else float(cands[-1])


def compute_tau_X_linear(m: SumGnn, x: float) -> float:
    """Reference linear scan for :func:`compute_tau_X`."""
    cands = _tau_candidates(m)
    for c in cands:
        if pct_monotone_output(_clamped(m, c)) > x:
            return float(c)
    return float(cands[-1])


# ---------------------------------------------------------------- thresholds

def select_threshold(scores: Sequence[float], labels: Sequence[int],
                     grid: Sequence[float] = THRESHOLD_GRID) -> float:
    """Grid threshold maximizing accuracy of ``score >= t``; ties go to the
    smallest threshold."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=bool)
    if len(s) == 0:
        raise ValidationError("threshold selection needs validation targets")
    best_t, best_acc = grid[0], -1.0
    for t in grid:
        acc = float(np.mean((s >= t) == y))
        if acc > best_acc:
            best_t, best_acc = t, acc
    return float(best_t)


def logit(p: float) -> float:
    return math.log(p / (1 - p))


# ---------------------------------------------------------------- training loop

@dataclass
class TrainResult:
    model: SumGnn
    history: List[Dict[str, float]]
    threshold: float
    stopped_early: bool = False

    @property
    def final_loss(self) -> float:
        return self.history[-1]["loss"] if self.history else float("nan")


def _history_row(m: SumGnn, epoch: int, loss: float, samples: int, seed: int) -> Dict[str, float]:
    out_safe = classify_safe(m)[-1]
    out_mono = classify_monotonicity(m)[-1]
    n = len(out_mono)
    hidden_relu = all(l.activation == "relu" for l in m.layers[:-1])
    ub = len(unbounded_sampled(m, samples, seed)) if samples and hidden_relu else 0
    return {
        "epoch": epoch,
        "loss": loss,
        "pct_safe": 100.0 * float(np.sum(out_safe)) / n,
        "pct_stable": 100.0 * sum(c == STABLE for c in out_mono) / n,
        "pct_inc": 100.0 * sum(c == INCREASING for c in out_mono) / n,
        "pct_unbounded_sampled": 100.0 * ub / n,
    }


def apply_paradigm(m: SumGnn, cfg: TrainConfig) -> Optional[float]:
    """Post-step hook; returns the clamping threshold used by ``rx``."""
    if cfg.paradigm == "mgcn":
        clamp_negative(m)
    elif cfg.paradigm == "rx":
        tau = compute_tau_X(m, cfg.x)
        clamp_threshold(m, tau)
        return tau
    return None


def train(m: SumGnn, train_ex: Union[TrainExample, EncodedExample],
          valid_ex: Optional[Union[TrainExample, EncodedExample]] = None,
          cfg: TrainConfig = TrainConfig(), callback=None) -> TrainResult:
    """Full-graph training; ``m`` is copied, not modified.

    ``callback(epoch, model)``, if given, runs after each epoch's paradigm
    hook (the invariant checks in the test-suite use it). After training the
    threshold maximizing validation accuracy on the logistic scale is
    selected and stored on the model as the matching raw threshold.
    """
    m = m.copy()
    enc_train = _as_encoded(m, train_ex)
    history: List[Dict[str, float]] = []
    state = AdamState.zeros_like(parameters(m))
    if cfg.paradigm == "mgcn":
        clamp_negative(m)
    best, bad, stopped = math.inf, 0, False
    for epoch in range(1, cfg.epochs + 1):
        loss, grads = loss_and_grads(m, enc_train)
        adam_step(m, grads, state, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
        apply_paradigm(m, cfg)
        for w in parameters(m):
            if not np.all(np.isfinite(w)):
                raise TrainingDiverged(f"non-finite weights after epoch {epoch}")
        history.append(_history_row(m, epoch, loss, cfg.history_samples, cfg.seed + epoch))
        if callback is not None:
            callback(epoch, m)
        if loss > best:
            bad += 1
            if bad >= cfg.patience:
                stopped = True
                break
        else:
            best, bad = loss, 0
    t = 0.5
    if valid_ex is not None and cfg.epochs > 0:
        enc_valid = _as_encoded(m, valid_ex)
        if len(enc_valid.facts):
            t = select_threshold(scores(m, enc_valid), enc_valid.labels)
            m.threshold = logit(t)
    return TrainResult(m, history, t, stopped)


def write_history(path: Union[str, Path], history: Sequence[Dict[str, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
        w.writeheader()
        for row in history:
            w.writerow({k: row[k] for k in HISTORY_COLUMNS})
