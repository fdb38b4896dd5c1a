"""The multimodal fusion model: shared-space projection, graph attention
(or graph convolution) over fully-connected multimodal graphs, mean-pool
readout, and a two-layer classifier head, plus the ablation variants and
checkpoint serialization.

Per edge j -> i the attention layer scores
``e_ij = LeakyReLU(a . [U m_i | U m_j])`` with U the attention projection,
normalizes with a softmax over each destination's incoming edges, and
aggregates ``sum_j alpha_ij (W m_j)`` with W the feature projection,
followed by an ELU. The score is computed as two per-node half-products
gathered per edge, which is equivalent to concatenation but avoids
materializing an (E, 2d) matrix.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from ._binio import Cursor
from .config import ModelConfig, Variant
from .errors import ContractError, DimensionError, FormatError
from .graphs import (
    BatchedGraph,
    Modality,
    MultimodalGraph,
    as_batch,
    build_multimodal_graph,
    build_unimodal_graph,
    resize_visual_feature,
)
from .tensor import Tensor


def param_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Names and shapes of every trainable tensor for the configured
    variant, in a fixed order."""
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("proj.weight", (config.d_in, config.d_shared)),
        ("proj.bias", (config.d_shared,)),
    ]
    attention = config.variant is not Variant.GCN_FUSION
    in_dim = config.d_shared
    for layer in range(config.n_gat_layers):
        p = f"gat{layer}."
        shapes.append((p + "feat_weight", (in_dim, config.d_gat)))
        if config.gat_feat_bias:
            shapes.append((p + "feat_bias", (config.d_gat,)))
        if attention:
            if not config.gat_shared_proj:
                shapes.append((p + "att_weight", (in_dim, config.d_gat)))
            if config.gat_att_bias:
                shapes.append((p + "att_bias", (config.d_gat,)))
            shapes.append((p + "att_vec", (2 * config.d_gat,)))
        in_dim = config.d_gat
    shapes += [
        ("head.hidden_weight", (config.d_pooled, config.d_hidden)),
        ("head.hidden_bias", (config.d_hidden,)),
        ("head.out_weight", (config.d_hidden, config.n_classes)),
        ("head.out_bias", (config.n_classes,)),
    ]
    return shapes


def count_parameters(config: ModelConfig) -> int:
    """Exact number of trainable scalars for the configured variant."""
    return sum(int(np.prod(shape)) for _, shape in param_shapes(config))


class ModelParams:
    """Ordered mapping of parameter names to trainable tensors."""

    def __init__(self, tensors: dict[str, Tensor]):
        self._tensors = dict(tensors)

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0, dtype=np.float32) -> "ModelParams":
        """Seeded fan-based (Glorot) uniform init for weights and the
        attention vector, zeros for biases."""
        rng = np.random.Generator(np.random.Philox(seed))
        tensors: dict[str, Tensor] = {}
        for name, shape in param_shapes(config):
            if name.endswith("bias"):
                data = np.zeros(shape, dtype=dtype)
            else:
                if len(shape) == 2:
                    fan_in, fan_out = shape
                else:
                    fan_in, fan_out = shape[0], 1
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                data = rng.uniform(-limit, limit, size=shape).astype(dtype)
            tensors[name] = Tensor(data, requires_grad=True)
        return cls(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def tensors(self) -> list[Tensor]:
        return list(self._tensors.values())

    @property
    def dtype(self):
        return next(iter(self._tensors.values())).dtype

    def total_size(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self._tensors.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            {k: Tensor(v.data.astype(dtype), requires_grad=v.requires_grad) for k, v in self.items()}
        )


@dataclass
class Prediction:
    """Batched class scores: row i holds [real, fake] for sample i."""

    logits: Tensor  # (n, 2)
    probs: Tensor   # (n, 2), rows sum to 1

    def labels(self) -> np.ndarray:
        """Argmax class per sample; exact ties resolve to class 0 (real)."""
        return np.argmax(self.probs.data, axis=1)


def project_shared(x: Tensor, params: ModelParams) -> Tensor:
    """Project node features into the shared multimodal space:
    ELU(x W + b), the same weights for text and visual nodes."""
    return T.elu(T.add_bias(T.matmul(x, params["proj.weight"]), params["proj.bias"]))


def _gat_layer(x, src, dst, n_nodes, params, config, layer, training, rng):
    p = f"gat{layer}."
    x = T.dropout(x, config.dropout, training, rng)
    base = T.matmul(x, params[p + "feat_weight"])
    u_feat = T.add_bias(base, params[p + "feat_bias"]) if p + "feat_bias" in params else base
    if config.gat_shared_proj:
        u_att = base
    else:
        u_att = T.matmul(x, params[p + "att_weight"])
    if p + "att_bias" in params:
        u_att = T.add_bias(u_att, params[p + "att_bias"])
    d = config.d_gat
    att_vec = params[p + "att_vec"]
    score_dst = T.matmul(u_att, T.slice_vec(att_vec, 0, d))      # a . (U m_i)
    score_src = T.matmul(u_att, T.slice_vec(att_vec, d, 2 * d))  # a . (U m_j)
    e = T.add(T.gather_rows(score_dst, dst), T.gather_rows(score_src, src))
    e = T.leaky_relu(e, config.leaky_slope)
    alpha = T.segment_softmax(e, dst, n_nodes)
    assert np.allclose(
        T._unsafe_segment_sum(alpha.data, dst, n_nodes), 1.0, atol=1e-6
    ), "attention weights do not sum to 1 per destination"
    messages = T.scale_rows(T.gather_rows(u_feat, src), alpha)
    return T.elu(T.segment_sum(messages, dst, n_nodes)), alpha


def _gcn_layer(x, src, dst, n_nodes, params, config, layer, training, rng):
    p = f"gat{layer}."
    x = T.dropout(x, config.dropout, training, rng)
    base = T.matmul(x, params[p + "feat_weight"])
    u_feat = T.add_bias(base, params[p + "feat_bias"]) if p + "feat_bias" in params else base
    deg = np.bincount(dst, minlength=n_nodes).astype(x.dtype)
    coef = Tensor(1.0 / np.sqrt(deg[dst] * deg[src]))
    messages = T.scale_rows(T.gather_rows(u_feat, src), coef)
    return T.elu(T.segment_sum(messages, dst, n_nodes))


def gat_forward(
    graph: MultimodalGraph | BatchedGraph,
    params: ModelParams,
    config: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
    layer: int = 0,
    return_alpha: bool = False,
):
    """One graph-attention layer over shared-space node features. Returns
    the (n, d_gat) node embeddings, optionally with the per-edge attention
    weights."""
    batch = as_batch(graph)
    x = Tensor(batch.features, dtype=params.dtype)
    out, alpha = _gat_layer(x, batch.src, batch.dst, batch.n_nodes, params, config, layer, training, rng)
    return (out, alpha) if return_alpha else out


def gcn_forward(
    graph: MultimodalGraph | BatchedGraph,
    params: ModelParams,
    config: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
    layer: int = 0,
) -> Tensor:
    """Symmetric-normalized graph convolution; on a fully-connected
    self-looped graph all degrees equal n, so this is mean aggregation."""
    batch = as_batch(graph)
    x = Tensor(batch.features, dtype=params.dtype)
    return _gcn_layer(x, batch.src, batch.dst, batch.n_nodes, params, config, layer, training, rng)


def mean_pool(node_embeddings: Tensor, graph_id, n_graphs: int) -> Tensor:
    """Per-graph arithmetic mean over node embeddings, summed in node-index
    order."""
    return T.segment_mean(node_embeddings, graph_id, n_graphs)


def classify(
    h: Tensor,
    params: ModelParams,
    config: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Prediction:
    """Two-layer head with intermediate ReLU (plus training dropout after
    it) and a softmax over the two classes."""
    hidden = T.relu(T.add_bias(T.matmul(h, params["head.hidden_weight"]), params["head.hidden_bias"]))
    hidden = T.dropout(hidden, config.dropout, training, rng)
    logits = T.add_bias(T.matmul(hidden, params["head.out_weight"]), params["head.out_bias"])
    probs = T.softmax_rows(logits)
    assert np.allclose(probs.data.sum(axis=1), 1.0, atol=1e-6), "class probabilities must sum to 1"
    return Prediction(logits=logits, probs=probs)


PROB_CLAMP = 1e-7


def cross_entropy_loss(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of the true class, with probabilities
    clamped to [1e-7, 1 - 1e-7] before the log. Labels: 0 real, 1 fake."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != probs.shape[0]:
        raise ContractError(
            f"got {probs.shape[0]} predictions but {labels.shape} labels"
        )
    if labels.shape[0] == 0:
        raise ContractError("cross_entropy_loss needs at least one sample")
    if not np.isin(labels, (0, 1)).all():
        raise ContractError("labels must be 0 (real) or 1 (fake)")
    picked = T.pick_per_row(probs, labels.astype(np.int64))
    logp = T.log(T.clamp(picked, PROB_CLAMP, 1.0 - PROB_CLAMP))
    return T.scale(T.sum_all(logp), -1.0 / labels.shape[0])


def forward(
    graph: MultimodalGraph | BatchedGraph,
    params: ModelParams,
    config: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
    return_alpha: bool = False,
):
    """Full variant pipeline: shared projection, graph layer(s), per-graph
    mean pooling, classifier. For the concatenation ablation the batch must
    hold (visual, text) graph pairs; their pooled representations are
    concatenated before classification."""
    batch = as_batch(graph)
    if batch.feature_dim != config.d_in:
        raise DimensionError(
            f"graph features have dim {batch.feature_dim}, model expects {config.d_in}"
        )
    x = Tensor(batch.features, dtype=params.dtype)
    h = project_shared(x, params)
    alphas = []
    for layer in range(config.n_gat_layers):
        if config.variant is Variant.GCN_FUSION:
            h = _gcn_layer(h, batch.src, batch.dst, batch.n_nodes, params, config, layer, training, rng)
        else:
            h, alpha = _gat_layer(h, batch.src, batch.dst, batch.n_nodes, params, config, layer, training, rng)
            alphas.append(alpha)
    pooled = mean_pool(h, batch.graph_id, batch.n_graphs)
    if config.variant is Variant.CONCATENATION:
        if batch.n_graphs % 2 != 0:
            raise ContractError(
                "concatenation variant expects (visual, text) graph pairs per sample"
            )
        pooled = T.reshape(pooled, (batch.n_graphs // 2, 2 * config.d_gat))
    pred = classify(pooled, params, config, training, rng)
    return (pred, alphas) if return_alpha else pred


def graphs_per_sample(variant: Variant) -> int:
    return 2 if variant is Variant.CONCATENATION else 1


def assemble_variant_graphs(
    g_text: MultimodalGraph,
    g_visual: MultimodalGraph,
    variant: Variant,
    self_loops: bool = True,
) -> list[MultimodalGraph]:
    """The graph(s) a variant consumes for one sample."""
    if variant in (Variant.FULL, Variant.GCN_FUSION):
        return [build_multimodal_graph(g_text, g_visual, self_loops)]
    if variant is Variant.TEXT_ONLY:
        return [g_text]
    if variant is Variant.VISUAL_ONLY:
        return [g_visual]
    return [g_visual, g_text]  # pooled visual block comes first after concat


def build_sample_graphs(
    text_features: np.ndarray,
    visual_features_raw: np.ndarray,
    variant: Variant,
    self_loops: bool = True,
) -> list[MultimodalGraph]:
    """Turn one sample's feature matrices into the graph(s) the variant
    consumes. Raw visual rows are mean-pool resized from 2048 to 768."""
    visual = resize_visual_feature(visual_features_raw)
    g_text = build_unimodal_graph(text_features, Modality.TEXT, self_loops)
    g_visual = build_unimodal_graph(visual, Modality.VISUAL, self_loops)
    return assemble_variant_graphs(g_text, g_visual, variant, self_loops)


# --------------------------------------------------------------------------
# Checkpoint container: GMCK | version | config JSON | named tensor sections

CHECKPOINT_MAGIC = b"GMCK"
CHECKPOINT_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def checkpoint_bytes(params: ModelParams, config: ModelConfig) -> bytes:
    cfg = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [CHECKPOINT_MAGIC, struct.pack("<H", CHECKPOINT_VERSION)]
    chunks.append(struct.pack("<I", len(cfg)))
    chunks.append(cfg)
    chunks.append(struct.pack("<I", len(params)))
    for name, t in params.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", _DTYPE_CODES[t.data.dtype], t.data.ndim))
        chunks.append(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
        chunks.append(np.ascontiguousarray(t.data).astype(t.data.dtype.newbyteorder("<")).tobytes())
    return b"".join(chunks)


def save_checkpoint(path, params: ModelParams, config: ModelConfig) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(params, config))


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig]:
    with open(path, "rb") as fh:
        raw = fh.read()
    cur = Cursor(raw, f"checkpoint {path}")
    magic = cur.take(4)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"checkpoint {path}: bad magic {magic!r} at offset 0")
    (version,) = cur.unpack("<H")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"checkpoint {path}: unsupported version {version}")
    (cfg_len,) = cur.unpack("<I")
    try:
        cfg_dict = json.loads(cur.take(cfg_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint {path}: bad config block: {exc}") from exc
    config = ModelConfig.from_dict(cfg_dict)
    (n_tensors,) = cur.unpack("<I")
    tensors: dict[str, Tensor] = {}
    for _ in range(n_tensors):
        (name_len,) = cur.unpack("<H")
        name = cur.take(name_len).decode("utf-8")
        dtype_code, ndim = cur.unpack("<BB")
        if dtype_code not in _CODE_DTYPES:
            raise FormatError(f"checkpoint {path}: unknown dtype code {dtype_code}")
        shape = cur.unpack(f"<{ndim}I")
        dtype = _CODE_DTYPES[dtype_code].newbyteorder("<")
        count = int(np.prod(shape)) if ndim else 1
        buf = cur.take(count * dtype.itemsize)
        data = np.frombuffer(buf, dtype=dtype).reshape(shape).astype(_CODE_DTYPES[dtype_code])
        tensors[name] = Tensor(data, requires_grad=True)
    cur.expect_end()
    expected = dict(param_shapes(config))
    for name, t in tensors.items():
        if name not in expected:
            raise FormatError(f"checkpoint {path}: unexpected tensor {name!r}")
        if tuple(t.shape) != tuple(expected[name]):
            raise FormatError(
                f"checkpoint {path}: tensor {name!r} has shape {t.shape}, config implies {expected[name]}"
            )
    missing = set(expected) - set(tensors)
    if missing:
        raise FormatError(f"checkpoint {path}: missing tensors {sorted(missing)}")
    return ModelParams(tensors), config
