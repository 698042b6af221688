"""Boltzmann machine models, energies, and exact Gibbs-table oracles.

Models are binary-unit Ising-style networks: visible units carry biases ``b``,
hidden units carry biases ``d``, and an explicit edge list carries the weights
(visible-hidden, visible-visible, hidden-hidden).  Everything here is sized for
exact enumeration: probability tables are built by brute force over all
``2^(n_v+n_h)`` configurations, with partition-function arithmetic done in log
space.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

# Largest number of free (enumerated) units we allow for exact tables.
# Exceeding it is an error, never a silent approximation.
ENUMERATION_CAP = 24

# Chunk size for vectorized sweeps over the configuration space.
_CHUNK = 1 << 18

MODEL_SCHEMA_VERSION = 1

TOPOLOGIES = ("rbm", "drbm", "full")


class ModelInvariantError(ValueError):
    """A model violates a structural invariant (self-edge, bad layer, ...)."""


class EnumerationCapError(ValueError):
    """Requested enumeration exceeds the configured cap."""


class SchemaError(ValueError):
    """A serialized model document is malformed or has the wrong version."""


@dataclass(eq=False)
class BoltzmannModel:
    """A Boltzmann machine over binary units.

    Units are indexed globally: visible units are ``0..n_v-1``, hidden units
    are ``n_v..n_v+n_h-1``.  ``layers`` assigns each unit to a layer index with
    layer 0 reserved for the visible units.  Edges are undirected, stored once
    as ``(a, b, weight)`` with ``a < b``.

    Topology flags constrain the edge set:

    * ``rbm``  - only visible-hidden edges (single bipartite layer pair),
    * ``drbm`` - edges only between adjacent layers,
    * ``full`` - unconstrained.
    """

    n_v: int
    n_h: int
    layers: np.ndarray
    edges: list[tuple[int, int, float]]
    b: np.ndarray
    d: np.ndarray
    topology: str = "full"

    def __post_init__(self) -> None:
        self.layers = np.asarray(self.layers, dtype=np.int64)
        self.b = np.asarray(self.b, dtype=np.float64)
        self.d = np.asarray(self.d, dtype=np.float64)
        n = self.n_v + self.n_h
        if self.n_v < 0 or self.n_h < 0 or n == 0:
            raise ModelInvariantError("model must have at least one unit")
        if self.layers.shape != (n,):
            raise ModelInvariantError(f"layers must have length {n}")
        if self.b.shape != (self.n_v,) or self.d.shape != (self.n_h,):
            raise ModelInvariantError("bias vectors do not match unit counts")
        if np.any(self.layers[: self.n_v] != 0):
            raise ModelInvariantError("visible units must be in layer 0")
        if self.n_h and np.any(self.layers[self.n_v :] < 1):
            raise ModelInvariantError("hidden units must be in layer >= 1")
        if not (np.all(np.isfinite(self.b)) and np.all(np.isfinite(self.d))):
            raise ModelInvariantError("biases must be finite")
        if self.topology not in TOPOLOGIES:
            raise ModelInvariantError(f"unknown topology {self.topology!r}")

        normalized = []
        seen = set()
        for a, bb, w in self.edges:
            a, bb = int(a), int(bb)
            if a == bb:
                raise ModelInvariantError(f"self-edge on unit {a}")
            if a > bb:
                a, bb = bb, a
            if not (0 <= a < n and 0 <= bb < n):
                raise ModelInvariantError(f"edge ({a},{bb}) out of range")
            if (a, bb) in seen:
                raise ModelInvariantError(f"duplicate edge ({a},{bb})")
            seen.add((a, bb))
            w = float(w)
            if not math.isfinite(w):
                raise ModelInvariantError(f"non-finite weight on edge ({a},{bb})")
            if self.topology == "rbm" and not (a < self.n_v <= bb):
                raise ModelInvariantError("rbm models allow only visible-hidden edges")
            if self.topology == "drbm" and abs(self.layers[a] - self.layers[bb]) != 1:
                raise ModelInvariantError("drbm models allow only adjacent-layer edges")
            normalized.append((a, bb, w))
        self.edges = normalized

    # -- basic views -------------------------------------------------------

    @property
    def n_units(self) -> int:
        return self.n_v + self.n_h

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @property
    def n_layers(self) -> int:
        return int(self.layers.max()) + 1 if self.n_units else 0

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Edge endpoints and weights as parallel arrays (may be empty)."""
        if not self.edges:
            z = np.zeros(0, dtype=np.int64)
            return z, z.copy(), np.zeros(0, dtype=np.float64)
        a, bb, w = zip(*self.edges)
        return (
            np.asarray(a, dtype=np.int64),
            np.asarray(bb, dtype=np.int64),
            np.asarray(w, dtype=np.float64),
        )

    def weight_matrix(self) -> np.ndarray:
        """Symmetric (n_units x n_units) weight matrix built from the edge list."""
        W = np.zeros((self.n_units, self.n_units))
        for a, bb, w in self.edges:
            W[a, bb] = w
            W[bb, a] = w
        return W

    def params_vector(self) -> np.ndarray:
        """Flatten parameters as [edge weights..., b..., d...]."""
        _, _, w = self.edge_arrays()
        return np.concatenate([w, self.b, self.d])

    def with_params(self, theta: np.ndarray) -> "BoltzmannModel":
        """Copy of this model with parameters replaced from a flat vector."""
        theta = np.asarray(theta, dtype=np.float64)
        ne = self.edge_count
        if theta.shape != (ne + self.n_units,):
            raise ModelInvariantError("parameter vector has wrong length")
        edges = [(a, bb, float(w)) for (a, bb, _), w in zip(self.edges, theta[:ne])]
        return BoltzmannModel(
            n_v=self.n_v,
            n_h=self.n_h,
            layers=self.layers.copy(),
            edges=edges,
            b=theta[ne : ne + self.n_v].copy(),
            d=theta[ne + self.n_v :].copy(),
            topology=self.topology,
        )

    def document_hash(self) -> str:
        """Short content hash of the serialized model, for artifact headers."""
        return hashlib.sha256(serialize_model(self).encode()).hexdigest()[:16]


@dataclass(eq=False)
class Configuration:
    """One joint assignment of the visible and hidden units (binary 0/1)."""

    v: np.ndarray
    h: np.ndarray

    def __post_init__(self) -> None:
        self.v = np.asarray(self.v, dtype=np.uint8)
        self.h = np.asarray(self.h, dtype=np.uint8)

    def units(self) -> np.ndarray:
        return np.concatenate([self.v, self.h])


@dataclass(eq=False)
class GibbsTable:
    """Exact Gibbs distribution over an enumerated configuration space.

    ``probabilities[k]`` is the probability of the k-th configuration in
    lexicographic order of the free units (all units, or the hidden units when
    ``clamp`` fixes the visible vector).  ``log_Z`` is log of the partition
    function Z, or of the clamped partition function Z_x.
    """

    model: BoltzmannModel
    clamp: Optional[np.ndarray]
    probabilities: np.ndarray
    log_Z: float

    def unit_column(self, unit: int) -> np.ndarray:
        """Value of one unit across all enumerated configurations."""
        n_rows = self.probabilities.shape[0]
        if self.clamp is not None:
            if unit < self.model.n_v:
                return np.full(n_rows, self.clamp[unit], dtype=np.float64)
            bit = unit - self.model.n_v
            n_free = self.model.n_h
        else:
            bit = unit
            n_free = self.model.n_units
        shift = n_free - 1 - bit
        return ((np.arange(n_rows, dtype=np.int64) >> shift) & 1).astype(np.float64)


def _check_config(model: BoltzmannModel, config: Configuration) -> None:
    if config.v.shape != (model.n_v,) or config.h.shape != (model.n_h,):
        raise ModelInvariantError(
            f"configuration ({config.v.shape[0]}, {config.h.shape[0]}) does not "
            f"match model ({model.n_v}, {model.n_h})"
        )


def energy(model: BoltzmannModel, config: Configuration) -> float:
    """Energy of one configuration.

    E(v,h) = -sum_i v_i b_i - sum_j h_j d_j - sum_edges w_ab u_a u_b,
    with each edge counted once.  Lower energy means higher Gibbs probability.
    """
    _check_config(model, config)
    u = config.units().astype(np.float64)
    ea, eb, ew = model.edge_arrays()
    pair = float(np.sum(ew * u[ea] * u[eb])) if len(ew) else 0.0
    return -(float(config.v @ model.b) + float(config.h @ model.d) + pair)


def enumerate_configurations(
    model: BoltzmannModel,
    clamp: Optional[Sequence[int]] = None,
    cap: int = ENUMERATION_CAP,
) -> Iterator[Configuration]:
    """Yield every configuration in lexicographic order (first unit varies slowest).

    With ``clamp`` the visible units are fixed and only the 2^n_h hidden
    assignments are produced.  Exceeding ``cap`` free units raises
    EnumerationCapError.
    """
    if clamp is not None:
        clamp = np.asarray(clamp, dtype=np.uint8)
        if clamp.shape != (model.n_v,):
            raise ModelInvariantError("clamp vector length does not match n_v")
        n_free = model.n_h
    else:
        n_free = model.n_units
    if n_free > cap:
        raise EnumerationCapError(
            f"{n_free} free units exceed the enumeration cap of {cap}"
        )
    for bits in itertools.product((0, 1), repeat=n_free):
        u = np.asarray(bits, dtype=np.uint8)
        if clamp is not None:
            yield Configuration(v=clamp.copy(), h=u)
        else:
            yield Configuration(v=u[: model.n_v], h=u[model.n_v :])


def _free_bit_matrix(n_bits: int, start: int, stop: int) -> np.ndarray:
    """Rows ``start:stop`` of the lexicographic bit matrix for n_bits units."""
    idx = np.arange(start, stop, dtype=np.int64)
    shifts = np.arange(n_bits - 1, -1, -1, dtype=np.int64)
    return ((idx[:, None] >> shifts[None, :]) & 1).astype(np.float64)


def all_energies(
    model: BoltzmannModel,
    clamp: Optional[Sequence[int]] = None,
    cap: int = ENUMERATION_CAP,
) -> np.ndarray:
    """Energies of every enumerated configuration, vectorized and chunked."""
    if clamp is not None:
        clamp = np.asarray(clamp, dtype=np.float64)
        if clamp.shape != (model.n_v,):
            raise ModelInvariantError("clamp vector length does not match n_v")
        n_free = model.n_h
    else:
        n_free = model.n_units
    if n_free > cap:
        raise EnumerationCapError(
            f"{n_free} free units exceed the enumeration cap of {cap}"
        )
    n_rows = 1 << n_free
    ea, eb, ew = model.edge_arrays()
    out = np.empty(n_rows, dtype=np.float64)
    for start in range(0, n_rows, _CHUNK):
        stop = min(start + _CHUNK, n_rows)
        bits = _free_bit_matrix(n_free, start, stop)
        if clamp is not None:
            U = np.empty((stop - start, model.n_units))
            U[:, : model.n_v] = clamp
            U[:, model.n_v :] = bits
        else:
            U = bits
        e = U[:, : model.n_v] @ model.b + U[:, model.n_v :] @ model.d
        for a, bb, w in zip(ea, eb, ew):
            e += w * U[:, a] * U[:, bb]
        out[start:stop] = -e
    return out


def gibbs_table(
    model: BoltzmannModel,
    clamp: Optional[Sequence[int]] = None,
    cap: int = ENUMERATION_CAP,
) -> GibbsTable:
    """Exact probability table p = exp(-E)/Z with log_Z from log-sum-exp."""
    energies = all_energies(model, clamp=clamp, cap=cap)
    neg_e = -energies
    m = np.max(neg_e)
    log_Z = m + math.log(np.sum(np.exp(neg_e - m)))
    probs = np.exp(neg_e - log_Z)
    clamp_arr = None if clamp is None else np.asarray(clamp, dtype=np.uint8)
    return GibbsTable(model=model, clamp=clamp_arr, probabilities=probs, log_Z=log_Z)


def moment(table: GibbsTable, selector: tuple) -> float:
    """Exact expectation of a unit or unit-pair product under a GibbsTable.

    Selectors: ("v", i), ("h", j), ("vh", i, j), ("vv", i, j), ("hh", i, j).
    """
    model = table.model
    kind = selector[0]
    if kind == "v":
        (i,) = selector[1:]
        cols = [_unit_index(model, "v", i)]
    elif kind == "h":
        (j,) = selector[1:]
        cols = [_unit_index(model, "h", j)]
    elif kind in ("vh", "vv", "hh"):
        i, j = selector[1:]
        cols = [
            _unit_index(model, kind[0], i),
            _unit_index(model, kind[1], j),
        ]
    else:
        raise ValueError(f"unknown moment selector {selector!r}")
    acc = table.probabilities.copy()
    for c in cols:
        acc *= table.unit_column(c)
    return float(np.sum(acc))


def _unit_index(model: BoltzmannModel, side: str, i: int) -> int:
    if side == "v":
        if not 0 <= i < model.n_v:
            raise IndexError(f"visible index {i} out of range")
        return i
    if not 0 <= i < model.n_h:
        raise IndexError(f"hidden index {i} out of range")
    return model.n_v + i


def random_model(
    n_v: int,
    n_h: int,
    topology: str = "rbm",
    weight_sigma: float = 0.1325,
    bias_sigma: float = 1.0,
    hidden_layers: Optional[Sequence[int]] = None,
    seed: Optional[int] = None,
) -> BoltzmannModel:
    """Random model with Gaussian weights and biases.

    Weights ~ N(0, weight_sigma^2), biases ~ N(0, bias_sigma^2); fully
    deterministic for a fixed seed.  ``hidden_layers`` gives the hidden layer
    sizes for drbm topology (must sum to n_h).
    """
    if topology not in TOPOLOGIES:
        raise ModelInvariantError(f"unknown topology {topology!r}")
    if topology == "drbm":
        if hidden_layers is None:
            raise ModelInvariantError("drbm topology requires hidden_layers")
        hidden_layers = [int(s) for s in hidden_layers]
        if any(s < 1 for s in hidden_layers) or sum(hidden_layers) != n_h:
            raise ModelInvariantError("hidden_layers must be positive and sum to n_h")
        layers = [0] * n_v
        for li, size in enumerate(hidden_layers, start=1):
            layers += [li] * size
    else:
        if hidden_layers is not None:
            raise ModelInvariantError(f"hidden_layers is only valid for drbm topology")
        layers = [0] * n_v + [1] * n_h

    layers = np.asarray(layers, dtype=np.int64)
    pairs = []
    if topology == "rbm":
        for i in range(n_v):
            for j in range(n_h):
                pairs.append((i, n_v + j))
    elif topology == "drbm":
        for a in range(n_v + n_h):
            for bb in range(a + 1, n_v + n_h):
                if abs(layers[a] - layers[bb]) == 1:
                    pairs.append((a, bb))
    else:
        for a in range(n_v + n_h):
            for bb in range(a + 1, n_v + n_h):
                pairs.append((a, bb))

    rng = np.random.default_rng(seed)
    weights = rng.normal(0.0, weight_sigma, size=len(pairs))
    b = rng.normal(0.0, bias_sigma, size=n_v)
    d = rng.normal(0.0, bias_sigma, size=n_h)
    edges = [(a, bb, float(w)) for (a, bb), w in zip(pairs, weights)]
    return BoltzmannModel(
        n_v=n_v, n_h=n_h, layers=layers, edges=edges, b=b, d=d, topology=topology
    )


def serialize_model(model: BoltzmannModel) -> str:
    """Portable versioned JSON document; float repr preserves exact values."""
    doc = {
        "version": MODEL_SCHEMA_VERSION,
        "n_v": model.n_v,
        "n_h": model.n_h,
        "layers": [int(x) for x in model.layers],
        "edges": [[a, bb, w] for a, bb, w in model.edges],
        "b": [float(x) for x in model.b],
        "d": [float(x) for x in model.d],
    }
    return json.dumps(doc, sort_keys=True)


def deserialize_model(text: str) -> BoltzmannModel:
    """Parse a model document, re-validating every invariant.

    The topology flag is inferred as the strictest one consistent with the
    edges and layer partition, so validity is preserved across round trips.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"malformed model document: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("model document must be a JSON object")
    if doc.get("version") != MODEL_SCHEMA_VERSION:
        raise SchemaError(
            f"unsupported schema version {doc.get('version')!r} "
            f"(expected {MODEL_SCHEMA_VERSION})"
        )
    required = ("n_v", "n_h", "layers", "edges", "b", "d")
    missing = [k for k in required if k not in doc]
    if missing:
        raise SchemaError(f"model document missing fields: {missing}")
    try:
        n_v = int(doc["n_v"])
        n_h = int(doc["n_h"])
        layers = np.asarray(doc["layers"], dtype=np.int64)
        edges = [(int(a), int(bb), float(w)) for a, bb, w in doc["edges"]]
        b = np.asarray(doc["b"], dtype=np.float64)
        d = np.asarray(doc["d"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"malformed model document: {exc}") from exc
    topology = _infer_topology(n_v, layers, edges)
    return BoltzmannModel(
        n_v=n_v, n_h=n_h, layers=layers, edges=edges, b=b, d=d, topology=topology
    )


def _infer_topology(n_v: int, layers: np.ndarray, edges: list) -> str:
    n_layers = int(layers.max()) + 1 if len(layers) else 1
    adjacent = all(abs(layers[a] - layers[bb]) == 1 for a, bb, _ in edges)
    if adjacent and n_layers == 2:
        return "rbm"
    if adjacent:
        return "drbm"
    return "full"
