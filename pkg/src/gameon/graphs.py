"""Graph construction: unimodal and multimodal fully-connected graphs,
the 2048 -> 768 visual resize, and mini-batch assembly.

Topology is implied (every node pair connected, self-loops included by
default) but edges are stored explicitly so ablations and alternative
topologies reuse the same message-passing code. Edges are laid out
destination-major: all edges into node 0, then into node 1, ...; this
keeps per-destination segments contiguous.

The multimodal graph orders the visual block before the text block, and
row 0 of each block is that modality's global node (whole-image feature /
whole-text embedding).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, StructuralError

VISUAL_RAW_DIM = 2048
SHARED_FEATURE_DIM = 768


class Modality(enum.IntEnum):
    TEXT = 0
    VISUAL = 1


def _pool_windows(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray]:
    """Adaptive mean-pool windows: output i averages input indices
    [floor(i*n_in/n_out), ceil((i+1)*n_in/n_out)). Returns a padded index
    matrix and matching weights (zero on padding)."""
    starts = (np.arange(n_out) * n_in) // n_out
    ends = -((-(np.arange(n_out) + 1) * n_in) // n_out)  # ceil division
    widths = ends - starts
    max_w = int(widths.max())
    idx = starts[:, None] + np.arange(max_w)[None, :]
    valid = np.arange(max_w)[None, :] < widths[:, None]
    idx = np.where(valid, idx, starts[:, None])
    weights = np.where(valid, 1.0 / widths[:, None], 0.0)
    return idx, weights


_RESIZE_IDX, _RESIZE_W = _pool_windows(VISUAL_RAW_DIM, SHARED_FEATURE_DIM)


def resize_visual_feature(v_raw: np.ndarray) -> np.ndarray:
    """Adaptive mean pooling of a 2048-d visual feature (or a stack of
    them, row-wise) down to 768 dims."""
    v = np.asarray(v_raw)
    if v.shape[-1] != VISUAL_RAW_DIM:
        raise DimensionError(
            f"visual feature must have length {VISUAL_RAW_DIM}, got {v.shape[-1]}"
        )
    w = _RESIZE_W.astype(v.dtype, copy=False)
    return (v[..., _RESIZE_IDX] * w).sum(axis=-1)


def full_edges(n: int, self_loops: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Destination-major edge arrays of the complete directed graph."""
    dst = np.repeat(np.arange(n, dtype=np.int64), n)
    src = np.tile(np.arange(n, dtype=np.int64), n)
    if not self_loops:
        keep = src != dst
        src, dst = src[keep], dst[keep]
    return src, dst


@dataclass
class MultimodalGraph:
    """Node features with modality tags plus an explicit edge list.
    Holds unimodal graphs (one count zero) and fused graphs alike."""

    features: np.ndarray  # (n, d)
    modality: np.ndarray  # (n,) of Modality values
    n_text: int
    n_visual: int
    src: np.ndarray  # (E,)
    dst: np.ndarray  # (E,)

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def n_edges(self) -> int:
        return self.src.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


def build_unimodal_graph(
    features: np.ndarray, modality: Modality, self_loops: bool = True
) -> MultimodalGraph:
    """Fully-connected bidirectional graph over one modality's nodes."""
    feats = np.asarray(features)
    if feats.ndim != 2:
        raise DimensionError(f"node features must be (n, d), got shape {feats.shape}")
    n = feats.shape[0]
    if n < 1:
        raise StructuralError("a graph needs at least one node")
    src, dst = full_edges(n, self_loops)
    tags = np.full(n, int(modality), dtype=np.uint8)
    n_text = n if modality == Modality.TEXT else 0
    n_visual = n if modality == Modality.VISUAL else 0
    return MultimodalGraph(feats, tags, n_text, n_visual, src, dst)


def build_multimodal_graph(
    g_text: MultimodalGraph, g_visual: MultimodalGraph, self_loops: bool = True
) -> MultimodalGraph:
    """Union of a text and a visual graph with every node pair connected in
    both directions (intra- and inter-modal, self-loops per flag). Nodes
    are ordered visual block first, then text block."""
    if g_text.n_visual != 0 or g_text.n_text < 1:
        raise ContractError("first argument must be an all-text graph")
    if g_visual.n_text != 0 or g_visual.n_visual < 1:
        raise ContractError("second argument must be an all-visual graph")
    if g_text.feature_dim != g_visual.feature_dim:
        raise DimensionError(
            f"feature dims differ: text {g_text.feature_dim} vs visual {g_visual.feature_dim}"
        )
    features = np.concatenate([g_visual.features, g_text.features], axis=0)
    modality = np.concatenate([g_visual.modality, g_text.modality])
    src, dst = full_edges(features.shape[0], self_loops)
    return MultimodalGraph(features, modality, g_text.n_text, g_visual.n_visual, src, dst)


def permute_nodes(graph: MultimodalGraph, perm: np.ndarray) -> MultimodalGraph:
    """Relabel nodes so that new node i is old node perm[i]; edges follow."""
    perm = np.asarray(perm)
    n = graph.n_nodes
    if sorted(perm.tolist()) != list(range(n)):
        raise ContractError(f"perm must be a permutation of 0..{n - 1}")
    inv = np.empty(n, dtype=np.int64)
    inv[perm] = np.arange(n, dtype=np.int64)
    return MultimodalGraph(
        features=graph.features[perm],
        modality=graph.modality[perm],
        n_text=graph.n_text,
        n_visual=graph.n_visual,
        src=inv[graph.src],
        dst=inv[graph.dst],
    )


@dataclass
class BatchedGraph:
    """Disjoint union of graphs with offset-shifted node ids. No edge
    crosses a graph boundary; unbatching recovers the inputs exactly."""

    features: np.ndarray      # (N, d)
    modality: np.ndarray      # (N,)
    graph_id: np.ndarray      # (N,)
    node_offsets: np.ndarray  # (g + 1,)
    edge_offsets: np.ndarray  # (g + 1,)
    src: np.ndarray
    dst: np.ndarray
    n_text: np.ndarray        # (g,)
    n_visual: np.ndarray      # (g,)

    @property
    def n_graphs(self) -> int:
        return self.node_offsets.shape[0] - 1

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


def batch_graphs(graphs: list[MultimodalGraph]) -> BatchedGraph:
    """Stack graphs into one disjoint union, preserving input order."""
    if not graphs:
        raise ContractError("cannot batch an empty list of graphs")
    dims = {g.feature_dim for g in graphs}
    if len(dims) > 1:
        raise DimensionError(f"graphs have mixed feature dims: {sorted(dims)}")
    node_counts = np.array([g.n_nodes for g in graphs], dtype=np.int64)
    edge_counts = np.array([g.n_edges for g in graphs], dtype=np.int64)
    node_offsets = np.concatenate([[0], np.cumsum(node_counts)])
    edge_offsets = np.concatenate([[0], np.cumsum(edge_counts)])
    return BatchedGraph(
        features=np.concatenate([g.features for g in graphs], axis=0),
        modality=np.concatenate([g.modality for g in graphs]),
        graph_id=np.repeat(np.arange(len(graphs), dtype=np.int64), node_counts),
        node_offsets=node_offsets,
        edge_offsets=edge_offsets,
        src=np.concatenate([g.src + off for g, off in zip(graphs, node_offsets[:-1])]),
        dst=np.concatenate([g.dst + off for g, off in zip(graphs, node_offsets[:-1])]),
        n_text=np.array([g.n_text for g in graphs], dtype=np.int64),
        n_visual=np.array([g.n_visual for g in graphs], dtype=np.int64),
    )


def unbatch_graphs(batch: BatchedGraph) -> list[MultimodalGraph]:
    out = []
    for g in range(batch.n_graphs):
        n0, n1 = batch.node_offsets[g], batch.node_offsets[g + 1]
        e0, e1 = batch.edge_offsets[g], batch.edge_offsets[g + 1]
        out.append(
            MultimodalGraph(
                features=batch.features[n0:n1].copy(),
                modality=batch.modality[n0:n1].copy(),
                n_text=int(batch.n_text[g]),
                n_visual=int(batch.n_visual[g]),
                src=batch.src[e0:e1] - n0,
                dst=batch.dst[e0:e1] - n0,
            )
        )
    return out


def as_batch(graph: MultimodalGraph | BatchedGraph) -> BatchedGraph:
    if isinstance(graph, BatchedGraph):
        return graph
    return batch_graphs([graph])
