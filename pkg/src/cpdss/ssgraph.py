"""Secondary-structure-level graph: segments, mean coordinates, kNN edges."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .protio import SS_ALPHABET, Protein


@dataclass(frozen=True)
class Segment:
    ss_class: str
    start: int
    length: int

    @property
    def stop(self) -> int:
        return self.start + self.length


@dataclass
class SSGraph:
    types: list[str]
    coords: np.ndarray  # m x 3, angstrom
    edges: np.ndarray  # E x 2 (src, dst): node src aggregates from dst
    weights: np.ndarray  # E
    segments: list[Segment] = field(default_factory=list)
    id: str = ""

    @property
    def m(self) -> int:
        return len(self.types)

    def one_hot(self) -> np.ndarray:
        out = np.zeros((self.m, 3))
        for i, t in enumerate(self.types):
            out[i, SS_ALPHABET.index(t)] = 1.0
        return out

    def to_json(self) -> str:
        doc = {
            "id": self.id,
            "types": list(self.types),
            "coords": [[float(v) for v in row] for row in self.coords],
            "edges": [[int(s), int(d), float(w)] for (s, d), w in zip(self.edges, self.weights)],
            "segments": [[s.ss_class, s.start, s.length] for s in self.segments],
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SSGraph":
        doc = json.loads(text)
        for key in ("types", "coords", "edges"):
            if key not in doc:
                raise KeyError(f"graph document missing field {key!r}")
        coords = np.asarray(doc["coords"], dtype=np.float64).reshape(-1, 3)
        edges = np.asarray([[e[0], e[1]] for e in doc["edges"]], dtype=np.int64).reshape(-1, 2)
        weights = np.asarray([e[2] for e in doc["edges"]], dtype=np.float64)
        segments = [Segment(c, int(s), int(n)) for c, s, n in doc.get("segments", [])]
        return cls(list(doc["types"]), coords, edges, weights, segments, doc.get("id", ""))


def segment(ss_seq: str) -> list[Segment]:
    """Maximal runs of equal labels, in order."""
    if not ss_seq:
        raise ValueError("cannot segment an empty SS sequence")
    out = []
    start = 0
    for i in range(1, len(ss_seq) + 1):
        if i == len(ss_seq) or ss_seq[i] != ss_seq[start]:
            out.append(Segment(ss_seq[start], start, i - start))
            start = i
    return out


def expand(segments: list[Segment]) -> str:
    return "".join(s.ss_class * s.length for s in segments)


def segment_ids(segments: list[Segment]) -> np.ndarray:
    """Per-residue segment index."""
    return np.repeat(np.arange(len(segments)), [s.length for s in segments])


def segment_coords(p: Protein, segments: list[Segment]) -> np.ndarray:
    ca = p.ca
    return np.stack([ca[s.start:s.stop].mean(axis=0) for s in segments])


def build_knn(coords: np.ndarray, k: int = 3) -> np.ndarray:
    """Directed edges (i, j) to the min(k, m-1) nearest other nodes; ties -> lower index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    coords = np.asarray(coords, dtype=np.float64)
    m = len(coords)
    if m < 1:
        raise ValueError("need at least one node")
    kk = min(k, m - 1)
    if kk == 0:
        return np.zeros((0, 2), dtype=np.int64)
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff * diff).sum(-1))
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")[:, :kk]
    src = np.repeat(np.arange(m), kk)
    return np.stack([src, order.reshape(-1)], axis=1).astype(np.int64)


def edge_features(edges: np.ndarray, coords: np.ndarray, mode: str = "sum") -> np.ndarray:
    """Distance fraction per edge, normalized per source node.

    ``mode``: ``sum`` (d / sum of the node's neighbor distances), ``max``
    (d / max over the node's neighbors) or ``global_max`` (d / max over all
    edges). Zero denominators give uniform weights.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if len(edges) == 0:
        return np.zeros(0)
    src, dst = edges[:, 0], edges[:, 1]
    d = np.linalg.norm(coords[src] - coords[dst], axis=1)
    m = len(coords)
    if mode == "global_max":
        top = d.max()
        return d / top if top > 0 else np.ones_like(d)
    if mode == "sum":
        denom = np.zeros(m)
        np.add.at(denom, src, d)
    elif mode == "max":
        denom = np.zeros(m)
        np.maximum.at(denom, src, d)
    else:
        raise ValueError(f"unknown edge feature mode {mode!r}")
    degree = np.bincount(src, minlength=m).astype(np.float64)
    w = np.empty_like(d)
    zero = denom[src] == 0
    w[~zero] = d[~zero] / denom[src][~zero]
    w[zero] = 1.0 / degree[src][zero] if mode == "sum" else 1.0
    return w


def build_graph(p: Protein, k: int = 3, edge_mode: str = "sum") -> SSGraph:
    if p.ss_seq is None:
        raise ValueError(f"{p.id}: ss_seq not assigned")
    segs = segment(p.ss_seq)
    coords = segment_coords(p, segs)
    edges = build_knn(coords, k)
    return SSGraph([s.ss_class for s in segs], coords, edges, edge_features(edges, coords, edge_mode),
                   segs, p.id)


@dataclass
class GraphBatch:
    """Disjoint union of graphs with node offsets applied to the edges."""

    onehot: np.ndarray  # N x 3
    coords: np.ndarray  # N x 3
    src: np.ndarray
    dst: np.ndarray
    weights: np.ndarray
    node_graph: np.ndarray  # N, graph index per node
    sizes: list[int]

    @property
    def n_nodes(self) -> int:
        return len(self.node_graph)

    @property
    def n_graphs(self) -> int:
        return len(self.sizes)

    @classmethod
    def from_graphs(cls, graphs: list[SSGraph]) -> "GraphBatch":
        onehot, coords, src, dst, w, ng, sizes = [], [], [], [], [], [], []
        off = 0
        for gi, g in enumerate(graphs):
            onehot.append(g.one_hot())
            coords.append(np.asarray(g.coords, dtype=np.float64))
            src.append(g.edges[:, 0] + off)
            dst.append(g.edges[:, 1] + off)
            w.append(g.weights)
            ng.append(np.full(g.m, gi))
            sizes.append(g.m)
            off += g.m
        return cls(np.concatenate(onehot), np.concatenate(coords),
                   np.concatenate(src).astype(np.int64), np.concatenate(dst).astype(np.int64),
                   np.concatenate(w), np.concatenate(ng).astype(np.int64), sizes)

    def split(self, rows: np.ndarray) -> list[np.ndarray]:
        return np.split(rows, np.cumsum(self.sizes)[:-1])
