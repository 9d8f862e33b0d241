"""Static classification of sum-GNN channels from the signs of the weights.

Three analyses, all data-independent:

* safe channels: only non-negative weights on safe predecessors;
* stable / increasing / decreasing / undetermined: how a channel's value
  can move when facts are added to the input;
* unbounded output channels: some Boolean seed vector and colour sequence
  drives the channel negative through the neighbour matrices alone, so a
  large enough fan-in pushes it below any threshold.

Weights are compared with zero exactly unless ``tol`` is given, in which case
entries with ``|w| <= tol`` count as zero (useful for weights trained
elsewhere without exact clamping).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import BudgetExceededError, ValidationError
from .gnn import SumGnn

STABLE = "stable"
INCREASING = "increasing"
DECREASING = "decreasing"
UNDETERMINED = "undetermined"

PROVEN_UNBOUNDED = "proven_unbounded"
PROVEN_NOT_UNBOUNDED = "proven_not_unbounded"
UNKNOWN = "unknown"

DEFAULT_EXACT_BUDGET = 2 ** 22


def _layer_weights(m: SumGnn, tol: float):
    for layer in m.layers:
        A = layer.A
        Bs = np.stack([layer.B[c] for c in m.colours]) if m.colours else np.zeros((0,) + A.shape)
        if tol > 0:
            A = np.where(np.abs(A) <= tol, 0.0, A)
            Bs = np.where(np.abs(Bs) <= tol, 0.0, Bs)
        yield A, Bs


def classify_safe(m: SumGnn, tol: float = 0.0) -> List[np.ndarray]:
    """Boolean safe flags for every layer ``0..L``."""
    flags = [np.ones(m.delta, dtype=bool)]
    for A, Bs in _layer_weights(m, tol):
        unsafe_prev = ~flags[-1]
        nonneg = np.all(A >= 0, axis=1) & np.all(Bs >= 0, axis=(0, 2))
        touches_unsafe = np.any(A[:, unsafe_prev] != 0, axis=1) | \
            np.any(Bs[:, :, unsafe_prev] != 0, axis=(0, 2))
        flags.append(nonneg & ~touches_unsafe)
    return flags


def classify_monotonicity(m: SumGnn, tol: float = 0.0) -> List[List[str]]:
    """Monotonicity class of every channel at every layer ``0..L``."""
    classes = [[INCREASING] * m.delta]
    for A, Bs in _layer_weights(m, tol):
        prev = np.array(classes[-1])
        inc, dec, und, stb = (prev == INCREASING), (prev == DECREASING), (prev == UNDETERMINED), (prev == STABLE)
        b_zero = np.all(Bs == 0, axis=0)  # (rows, cols)
        stable = np.all(b_zero, axis=1) & np.all((A == 0) | stb, axis=1)
        # per (i, j) conditions shared by increasing and decreasing
        dec_ok_b = ~dec | b_zero
        und_ok = ~und | ((A == 0) & b_zero)
        increasing = (np.all(~inc | (A >= 0), axis=1) & np.all(~dec | (A <= 0), axis=1)
                      & np.all(dec_ok_b & und_ok, axis=1) & np.all(Bs >= 0, axis=(0, 2)))
        decreasing = (np.all(~inc | (A <= 0), axis=1) & np.all(~dec | (A >= 0), axis=1)
                      & np.all(dec_ok_b & und_ok, axis=1) & np.all(Bs <= 0, axis=(0, 2)))
        row = []
        for i in range(A.shape[0]):
            if stable[i]:
                row.append(STABLE)
            elif increasing[i]:
                row.append(INCREASING)
            elif decreasing[i]:
                row.append(DECREASING)
            else:
                row.append(UNDETERMINED)
        classes.append(row)
    return classes


# ---------------------------------------------------------------- unbounded channels

@dataclass(frozen=True)
class ProbeWitness:
    """Seed vector ``y0`` and colours ``c_1..c_L`` with the resulting
    ``B_L^{c_L} y_{L-1}``; channel ``p`` is unbounded when ``final[p] < 0``."""

    y0: Tuple[int, ...]
    colours: Tuple[str, ...]
    final: Tuple[float, ...]

    def to_json(self) -> dict:
        return {"y0": list(self.y0), "colours": list(self.colours), "final": list(self.final)}

    @classmethod
    def from_json(cls, obj: dict) -> "ProbeWitness":
        return cls(tuple(obj["y0"]), tuple(obj["colours"]), tuple(obj["final"]))


def _require_relu_hidden(m: SumGnn) -> None:
    for i, layer in enumerate(m.layers[:-1], 1):
        if layer.activation != "relu":
            raise ValidationError(f"unbounded analysis needs ReLU hidden layers; layer {i} is {layer.activation}")


def probe(m: SumGnn, y0: Sequence[int], colours: Sequence[str]) -> ProbeWitness:
    _require_relu_hidden(m)
    if len(colours) != m.num_layers:
        raise ValidationError(f"need {m.num_layers} colours, got {len(colours)}")
    if len(y0) != m.delta or any(v not in (0, 1) for v in y0):
        raise ValidationError(f"y0 must be a Boolean vector of length {m.delta}")
    y = np.asarray(y0, dtype=float)
    for layer, c in zip(m.layers[:-1], colours[:-1]):
        y = np.maximum(layer.B[c] @ y, 0.0)
    final = m.layers[-1].B[colours[-1]] @ y
    return ProbeWitness(tuple(int(v) for v in y0), tuple(colours), tuple(float(v) for v in final))


def gray_code_vectors(n: int, start: int = 0, stop: Optional[int] = None) -> np.ndarray:
    """Rows ``start..stop`` of the reflected Gray code over ``n`` bits (bit 0 first)."""
    stop = 2 ** n if stop is None else stop
    k = np.arange(start, stop, dtype=np.int64)
    g = k ^ (k >> 1)
    return ((g[:, None] >> np.arange(n)) & 1).astype(float)


def _collect(final: np.ndarray, found: Dict[int, ProbeWitness], y0s: np.ndarray, seq) -> None:
    neg = final < 0
    for p in np.flatnonzero(neg.any(axis=0)):
        if p in found:
            continue
        r = int(np.argmax(neg[:, p]))
        found[int(p)] = ProbeWitness(tuple(int(v) for v in y0s[r]), tuple(seq),
                                     tuple(float(v) for v in final[r]))


def unbounded_exact(m: SumGnn, budget: int = DEFAULT_EXACT_BUDGET,
                    chunk: int = 1 << 14) -> Tuple[Dict[int, ProbeWitness], List[int]]:
    """Exhaustive search over all (y0, colour sequence) pairs.

    Returns witnesses for the unbounded output channels and the list of
    channels proven not unbounded. Stops early once every channel is found.
    """
    _require_relu_hidden(m)
    L, k = m.num_layers, len(m.colours)
    total = (2 ** m.delta) * (k ** L)
    if total > budget:
        raise BudgetExceededError(f"exact enumeration needs {total} probes (budget {budget}); use sampled mode")
    found: Dict[int, ProbeWitness] = {}
    out_dim = m.dims[-1]
    if k == 0:
        return found, list(range(out_dim))

    def dfs(y: np.ndarray, depth: int, prefix: Tuple[str, ...], y0s: np.ndarray) -> bool:
        layer = m.layers[depth]
        for c in m.colours:
            z = y @ layer.B[c].T
            seq = prefix + (c,)
            if depth == L - 1:
                _collect(z, found, y0s, seq)
                if len(found) == out_dim:
                    return True
            elif dfs(np.maximum(z, 0.0), depth + 1, seq, y0s):
                return True
        return False

    for start in range(0, 2 ** m.delta, chunk):
        y0s = gray_code_vectors(m.delta, start, min(start + chunk, 2 ** m.delta))
        if dfs(y0s, 0, (), y0s):
            break
    return found, [p for p in range(out_dim) if p not in found]


def unbounded_sampled(m: SumGnn, n: int = 1000, seed: int = 0) -> Dict[int, ProbeWitness]:
    """Witnesses found among ``n`` uniformly sampled probes.

    Channels without a witness may still be unbounded.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    _require_relu_hidden(m)
    found: Dict[int, ProbeWitness] = {}
    if not m.colours:
        return found
    rng = np.random.default_rng(seed)
    y0s = rng.integers(0, 2, size=(n, m.delta)).astype(float)
    picks = rng.integers(0, len(m.colours), size=(n, m.num_layers))
    y = y0s
    for depth, layer in enumerate(m.layers):
        z = np.zeros((n, layer.shape[0]))
        for ci, c in enumerate(m.colours):
            rows = picks[:, depth] == ci
            if rows.any():
                z[rows] = y[rows] @ layer.B[c].T
        y = z if depth == m.num_layers - 1 else np.maximum(z, 0.0)
    neg = y < 0
    for p in np.flatnonzero(neg.any(axis=0)):
        r = int(np.argmax(neg[:, p]))
        seq = tuple(m.colours[ci] for ci in picks[r])
        found[int(p)] = ProbeWitness(tuple(int(v) for v in y0s[r]), seq, tuple(float(v) for v in y[r]))
    return found


# ---------------------------------------------------------------- reports

@dataclass
class ChannelReport:
    fingerprint: str
    safe: List[List[bool]]
    mono: List[List[str]]
    unbounded: List[str]
    method: dict
    witnesses: Dict[int, ProbeWitness] = field(default_factory=dict)
    channel_names: Tuple[str, ...] = ()

    @property
    def num_layers(self) -> int:
        return len(self.mono) - 1

    def output_class(self, p: int) -> str:
        return self.mono[-1][p]

    def is_monotone_output(self, p: int) -> bool:
        return self.mono[-1][p] in (STABLE, INCREASING)

    def percentages(self) -> Dict[str, float]:
        out = self.mono[-1]
        n = len(out)
        if n == 0:
            return {"pct_ub": 0.0, "pct_stable": 0.0, "pct_inc": 0.0, "pct_safe": 0.0}
        return {
            "pct_ub": 100.0 * sum(s == PROVEN_UNBOUNDED for s in self.unbounded) / n,
            "pct_stable": 100.0 * sum(c == STABLE for c in out) / n,
            "pct_inc": 100.0 * sum(c == INCREASING for c in out) / n,
            "pct_safe": 100.0 * sum(self.safe[-1]) / n,
        }

    def to_json(self) -> dict:
        layers = {}
        for l, (safe, mono) in enumerate(zip(self.safe, self.mono)):
            chans = {}
            for i, (s, c) in enumerate(zip(safe, mono)):
                entry = {"safe": bool(s), "mono": c}
                if l == self.num_layers:
                    ub = {"state": self.unbounded[i]}
                    if i in self.witnesses:
                        ub["witness"] = self.witnesses[i].to_json()
                    entry["unbounded"] = ub
                    if self.channel_names:
                        entry["name"] = self.channel_names[i]
                chans[str(i)] = entry
            layers[str(l)] = chans
        return {"fingerprint": self.fingerprint, "method": self.method,
                "percentages": self.percentages(), "layers": layers}

    @classmethod
    def from_json(cls, obj: dict) -> "ChannelReport":
        layer_keys = sorted(obj["layers"], key=int)
        safe, mono = [], []
        for lk in layer_keys:
            chans = obj["layers"][lk]
            keys = sorted(chans, key=int)
            safe.append([chans[k]["safe"] for k in keys])
            mono.append([chans[k]["mono"] for k in keys])
        out = obj["layers"][layer_keys[-1]]
        keys = sorted(out, key=int)
        unbounded = [out[k]["unbounded"]["state"] for k in keys]
        witnesses = {int(k): ProbeWitness.from_json(out[k]["unbounded"]["witness"])
                     for k in keys if "witness" in out[k]["unbounded"]}
        names = tuple(out[k].get("name", "") for k in keys) if all("name" in out[k] for k in keys) else ()
        return cls(obj["fingerprint"], safe, mono, unbounded, obj["method"], witnesses, names)


def analyze(m: SumGnn, method: str = "auto", samples: int = 1000, seed: int = 0,
            budget: int = DEFAULT_EXACT_BUDGET, tol: float = 0.0) -> ChannelReport:
    """Full channel report. ``method`` is ``exact``, ``sampled`` or ``auto``
    (exact when within budget)."""
    safe = [list(map(bool, f)) for f in classify_safe(m, tol)]
    mono = classify_monotonicity(m, tol)
    out_dim = m.dims[-1]
    hidden_relu = all(layer.activation == "relu" for layer in m.layers[:-1])
    if not hidden_relu:
        return ChannelReport(m.fingerprint(), safe, mono, [UNKNOWN] * out_dim, {"kind": "skipped"},
                             {}, m.unary_predicates)
    if method == "auto":
        total = (2 ** m.delta) * (len(m.colours) ** m.num_layers)
        method = "exact" if total <= budget else "sampled"
    if method == "exact":
        witnesses, proven_not = unbounded_exact(m, budget)
        states = [PROVEN_UNBOUNDED if p in witnesses else PROVEN_NOT_UNBOUNDED for p in range(out_dim)]
        tag = {"kind": "exact"}
    elif method == "sampled":
        witnesses = unbounded_sampled(m, samples, seed)
        states = [PROVEN_UNBOUNDED if p in witnesses else UNKNOWN for p in range(out_dim)]
        tag = {"kind": "sampled", "n": samples, "seed": seed}
    else:
        raise ValueError(f"unknown method {method!r}")
    return ChannelReport(m.fingerprint(), safe, mono, states, tag, witnesses, m.unary_predicates)
