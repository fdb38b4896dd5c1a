"""Model and training configuration dataclasses.

Defaults reproduce the published setup: 768-d shared space, one
single-head graph-attention layer with output dim 256, a 128-unit
classifier head, 0.4 dropout, Adam at 1e-4 with linear decay, effective
batch size 512.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields

from .errors import ValidationError


class Variant(enum.Enum):
    """Forward-path selector: the full model and its four ablations."""

    FULL = "full"
    GCN_FUSION = "gcn"
    CONCATENATION = "concat"
    TEXT_ONLY = "text"
    VISUAL_ONLY = "visual"


# Human-readable row labels for ablation tables.
VARIANT_LABELS = {
    Variant.TEXT_ONLY: "Textual",
    Variant.VISUAL_ONLY: "Visual",
    Variant.CONCATENATION: "Concatenation",
    Variant.GCN_FUSION: "GCN-Fusion",
    Variant.FULL: "GAME-ON",
}


@dataclass
class ModelConfig:
    d_in: int = 768
    d_shared: int = 768
    d_gat: int = 256
    d_hidden: int = 128
    n_classes: int = 2
    n_heads: int = 1
    n_gat_layers: int = 1
    dropout: float = 0.4
    leaky_slope: float = 0.2
    variant: Variant = Variant.FULL
    # The published parameter total is consistent with separate attention
    # and feature projections carrying exactly one bias between them.
    gat_feat_bias: bool = False
    gat_att_bias: bool = True
    # Alternative reading of the layer equations: one projection shared by
    # the attention scores and the messages.
    gat_shared_proj: bool = False
    self_loops: bool = True

    def __post_init__(self):
        if isinstance(self.variant, str):
            try:
                self.variant = Variant(self.variant)
            except ValueError:
                names = ", ".join(v.value for v in Variant)
                raise ValidationError(
                    f"unknown variant {self.variant!r}; expected one of: {names}"
                ) from None
        for name in ("d_in", "d_shared", "d_gat", "d_hidden", "n_classes"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_heads != 1:
            raise ValidationError("multi-head attention is not supported; n_heads must be 1")
        if self.n_gat_layers < 1:
            raise ValidationError("n_gat_layers must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValidationError(f"leaky_slope must be in (0, 1), got {self.leaky_slope}")

    @property
    def d_pooled(self) -> int:
        """Classifier input width: doubled when the two modality graphs are
        pooled separately and concatenated."""
        if self.variant is Variant.CONCATENATION:
            return 2 * self.d_gat
        return self.d_gat

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainConfig:
    batch_size: int = 512
    lr_init: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps_adam: float = 1e-8
    epochs: int = 100
    seed: int = 0
    lr_final: float = 0.0
    weight_decay: float = 0.0
    eval_every: int = 1
    early_stop_patience: int | None = None
    # Micro-batch size for gradient accumulation; None runs each logical
    # batch in one pass. Accumulation matches the single pass up to
    # summation order.
    micro_batch_size: int | None = None

    def __post_init__(self):
        if isinstance(self.betas, list):
            self.betas = tuple(self.betas)
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        # lr_init == lr_final (constant schedule) is allowed so that a zero
        # learning rate remains expressible.
        if not self.lr_init >= self.lr_final >= 0.0:
            raise ValidationError(
                f"need lr_init >= lr_final >= 0, got {self.lr_init}, {self.lr_final}"
            )
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ValidationError(f"betas must be two values in [0, 1), got {self.betas}")
        if self.eval_every < 1:
            raise ValidationError("eval_every must be >= 1")
        if self.early_stop_patience is not None and self.early_stop_patience < 1:
            raise ValidationError("early_stop_patience must be >= 1 when set")
        if self.micro_batch_size is not None and self.micro_batch_size < 1:
            raise ValidationError("micro_batch_size must be >= 1 when set")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)
