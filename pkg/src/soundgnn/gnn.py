"""Sum-GNNs and the dataset transformations they induce.

Layer update, for every vertex ``v``::

    v_l = act_l(b_l + A_l v_{l-1} + sum_c B_l^c sum_{(u, v) in E^c} u_{l-1})

i.e. a vertex aggregates its *in*-neighbours of each colour.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .codec import ColGraph, LinkSignature, decode_canonical, decode_linkpred, encode_canonical, encode_linkpred
from .datalog import Atom, Dataset, Signature
from .errors import ModelFormatError, ValidationError

FORMAT_VERSION = 1
ACTIVATIONS = ("relu", "capped_relu")


@dataclass
class Layer:
    A: np.ndarray
    B: Dict[str, np.ndarray]
    b: np.ndarray
    activation: str = "relu"
    cap: Optional[float] = None

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.B = {c: np.asarray(m, dtype=float) for c, m in self.B.items()}
        self.b = np.asarray(self.b, dtype=float)
        if self.A.ndim != 2:
            raise ModelFormatError("A must be a matrix")
        for c, m in self.B.items():
            if m.shape != self.A.shape:
                raise ModelFormatError(f"B[{c}] has shape {m.shape}, A has {self.A.shape}")
        if self.b.shape != (self.A.shape[0],):
            raise ModelFormatError(f"bias has shape {self.b.shape}, expected ({self.A.shape[0]},)")
        if self.activation not in ACTIVATIONS:
            raise ModelFormatError(f"unknown activation {self.activation!r}")
        if self.activation == "capped_relu" and not (self.cap is not None and self.cap > 0):
            raise ModelFormatError("capped_relu needs a positive cap")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.A.shape

    def activate(self, z: np.ndarray) -> np.ndarray:
        out = np.maximum(z, 0.0)
        if self.activation == "capped_relu":
            out = np.minimum(out, self.cap)
        return out

    def activation_grad(self, z: np.ndarray) -> np.ndarray:
        g = (z > 0).astype(float)
        if self.activation == "capped_relu":
            g *= (z < self.cap)
        return g

    def matrices(self):
        """``A`` followed by ``B`` in colour order (views, not copies)."""
        return [self.A] + [self.B[c] for c in sorted(self.B)]


@dataclass
class SumGnn:
    """A layered sum-GNN over a signature.

    ``unary_predicates`` names the input/output channels and ``colours`` the
    edge colours. For link-prediction models ``base_signature`` holds the
    original signature and the channel names are the lifted ones.
    """

    unary_predicates: Tuple[str, ...]
    colours: Tuple[str, ...]
    layers: List[Layer]
    threshold: float = 0.5
    base_signature: Optional[Signature] = None

    def __post_init__(self):
        self.unary_predicates = tuple(self.unary_predicates)
        self.colours = tuple(self.colours)
        if not self.layers:
            raise ModelFormatError("a sum-GNN needs at least one layer")
        if not np.isfinite(self.threshold):
            raise ModelFormatError("threshold must be finite")
        prev = len(self.unary_predicates)
        for i, layer in enumerate(self.layers, 1):
            if layer.shape[1] != prev:
                raise ModelFormatError(f"layer {i} expects {layer.shape[1]} inputs, previous layer has {prev}")
            if set(layer.B) != set(self.colours):
                raise ModelFormatError(f"layer {i} colours {sorted(layer.B)} != model colours {sorted(self.colours)}")
            for m in layer.matrices() + [layer.b]:
                if not np.all(np.isfinite(m)):
                    raise ModelFormatError(f"layer {i} has NaN/Inf weights")
            prev = layer.shape[0]
        if prev != len(self.unary_predicates):
            raise ModelFormatError(f"output dimension {prev} != input dimension {len(self.unary_predicates)}")
        if self.base_signature is not None:
            expected = LinkSignature.lift(self.base_signature).lifted
            if expected.unary_predicates != self.unary_predicates or expected.binary_predicates != self.colours:
                raise ModelFormatError("base signature does not match the lifted channel names")

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def delta(self) -> int:
        return len(self.unary_predicates)

    @property
    def dims(self) -> List[int]:
        return [self.delta] + [layer.shape[0] for layer in self.layers]

    @property
    def signature(self) -> Signature:
        return Signature(self.unary_predicates, self.colours)

    @property
    def link_signature(self) -> LinkSignature:
        if self.base_signature is None:
            raise ValidationError("model is not a link-prediction model")
        return LinkSignature.lift(self.base_signature)

    @property
    def is_linkpred(self) -> bool:
        return self.base_signature is not None

    def matrices(self) -> List[np.ndarray]:
        return [m for layer in self.layers for m in layer.matrices()]

    def copy(self) -> "SumGnn":
        return SumGnn.from_json(self.to_json())

    # ------------------------------------------------------------ serialization

    def to_json(self) -> dict:
        obj = {
            "version": FORMAT_VERSION,
            "unary_predicates": list(self.unary_predicates),
            "colours": list(self.colours),
            "layers": [
                {
                    "A": layer.A.tolist(),
                    "B": {c: layer.B[c].tolist() for c in self.colours},
                    "b": layer.b.tolist(),
                    "activation": layer.activation,
                    **({"cap": layer.cap} if layer.activation == "capped_relu" else {}),
                }
                for layer in self.layers
            ],
            "threshold": float(self.threshold),
        }
        if self.base_signature is not None:
            obj["base_signature"] = self.base_signature.to_json()
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "SumGnn":
        if obj.get("version") != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported model version {obj.get('version')!r}")
        try:
            layers = [
                Layer(np.array(l["A"], dtype=float),
                      {c: np.array(m, dtype=float) for c, m in l["B"].items()},
                      np.array(l["b"], dtype=float), l.get("activation", "relu"), l.get("cap"))
                for l in obj["layers"]
            ]
            base = obj.get("base_signature")
            return cls(tuple(obj["unary_predicates"]), tuple(obj["colours"]), layers,
                       float(obj["threshold"]), Signature.from_json(base) if base is not None else None)
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ValidationError):
                raise
            raise ModelFormatError(f"malformed model file: {e}") from None

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def save_model(m: SumGnn, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(m.to_json(), indent=1) + "\n", encoding="utf-8")


def load_model(path: Union[str, Path]) -> SumGnn:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"{path}: not valid JSON ({e})") from None
    return SumGnn.from_json(obj)


# ---------------------------------------------------------------- evaluation

@dataclass
class LayerTrace:
    graph: ColGraph
    values: List[np.ndarray]
    pre_activations: List[np.ndarray] = field(default_factory=list)
    aggregates: List[Dict[str, np.ndarray]] = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.values[-1]


def forward(m: SumGnn, g: ColGraph, keep_intermediates: bool = False) -> LayerTrace:
    if g.delta != m.delta:
        raise ValidationError(f"graph has {g.delta} channels, model expects {m.delta}")
    unknown = set(g.colours) - set(m.colours)
    if unknown:
        raise ValidationError(f"graph uses colours unknown to the model: {sorted(unknown)}")
    h = g.labels
    trace = LayerTrace(g, [h])
    present = [c for c in m.colours if c in g.colours]
    for layer in m.layers:
        z = h @ layer.A.T + layer.b
        aggs = {}
        for c in present:
            agg = g.adjacency(c) @ h
            aggs[c] = agg
            z = z + agg @ layer.B[c].T
        h = layer.activate(z)
        trace.values.append(h)
        if keep_intermediates:
            trace.pre_activations.append(z)
            trace.aggregates.append(aggs)
    return trace


def classify_output(m: SumGnn, trace: LayerTrace) -> ColGraph:
    g = trace.graph
    labels = (trace.output >= m.threshold).astype(float)
    return ColGraph(g.vertices, g.colours, dict(g.edges), labels)


def transform(m: SumGnn, d: Dataset) -> Dataset:
    sig = m.signature
    g = encode_canonical(d, sig)
    return decode_canonical(classify_output(m, forward(m, g)), sig)


def transform_linkpred(m: SumGnn, d: Dataset) -> Dataset:
    ls = m.link_signature
    lifted, _ = encode_linkpred(d, ls.base)
    return decode_linkpred(transform(m, lifted), ls)


def _tag(i: int, c: str) -> str:
    return f"{i}#{c}"


def _untag(c: str) -> Tuple[int, str]:
    i, rest = c.split("#", 1)
    return int(i), rest


def transform_many(m: SumGnn, datasets: Sequence[Dataset], linkpred: bool = False) -> List[Dataset]:
    """Apply the transformation to many datasets with one forward pass.

    The datasets are renamed apart and evaluated as a disjoint union; the
    renaming keeps each dataset's constant order, so link-prediction pair
    orientation is unchanged.
    """
    union = {Atom(f.predicate, tuple(_tag(i, a) for a in f.args))
             for i, d in enumerate(datasets) for f in d}
    if linkpred:
        ls = m.link_signature
        lifted, _ = encode_linkpred(frozenset(union), ls.base)
        out = decode_linkpred(transform(m, lifted), ls)
    else:
        out = transform(m, frozenset(union))
    buckets: List[set] = [set() for _ in datasets]
    for f in out:
        untagged = [_untag(a) for a in f.args]
        buckets[untagged[0][0]].add(Atom(f.predicate, tuple(a for _, a in untagged)))
    return [frozenset(b) for b in buckets]
