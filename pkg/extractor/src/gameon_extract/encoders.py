"""Text and visual encoders.

Two interchangeable backends produce the same output contracts:

* text  -> (k+1, 768):  row 0 is a whole-text embedding, rows 1..k are
  per-token embeddings, truncated at ``max_tokens`` tokens;
* image -> (l+1, 2048): row 0 is the whole-image feature, rows 1..l are
  features of detected object regions (l may be 0).

``pretrained`` uses frozen published models (a BERT encoder for text; a
Faster R-CNN detector plus a ResNet-50 trunk for images) and needs their
weights on disk or a network path to fetch them. ``hashed`` is a
self-contained deterministic stand-in for offline testing: embeddings are
seeded by content digests, region proposals come from a variance scan.
Both are deterministic for fixed inputs and model versions.
"""
from __future__ import annotations

import hashlib
import re

import numpy as np
from PIL import Image

TEXT_DIM = 768
VISUAL_DIM = 2048

DEFAULT_MAX_TOKENS = 31
DEFAULT_MAX_OBJECTS = 5
DEFAULT_CONFIDENCE = 0.7

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class EncoderError(RuntimeError):
    pass


def _digest_vector(payload: bytes, dim: int) -> np.ndarray:
    seed = np.frombuffer(hashlib.blake2b(payload, digest_size=16).digest(), dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=seed))
    v = rng.standard_normal(dim)
    return (v / np.linalg.norm(v)).astype(np.float32)


class HashedTextEncoder:
    """Content-hash token embeddings; the whole-text row is the normalized
    token average, so it is a deterministic function of the text."""

    name = "hashed-text"

    def __init__(self, max_tokens: int = DEFAULT_MAX_TOKENS):
        self.max_tokens = max_tokens

    def encode(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EncoderError("text is empty")
        tokens = _TOKEN_RE.findall(text.lower())[: self.max_tokens]
        if not tokens:
            raise EncoderError("text has no tokens")
        rows = [_digest_vector(f"tok:{i}:{t}".encode(), TEXT_DIM) for i, t in enumerate(tokens)]
        summary = np.mean(rows, axis=0)
        summary = summary / (np.linalg.norm(summary) + 1e-12)
        return np.vstack([summary.astype(np.float32)] + rows)


class HashedVisualEncoder:
    """Whole-image digest embedding plus region features for high-variance
    quadrants (a crude detector with the right output shape)."""

    name = "hashed-visual"

    def __init__(self, max_objects: int = DEFAULT_MAX_OBJECTS, confidence: float = DEFAULT_CONFIDENCE):
        self.max_objects = max_objects
        self.confidence = confidence

    def encode(self, image_path) -> np.ndarray:
        try:
            with Image.open(image_path) as img:
                gray = np.asarray(img.convert("L").resize((32, 32)), dtype=np.float32)
        except OSError as exc:
            raise EncoderError(f"cannot decode image {image_path}: {exc}") from exc
        rows = [_digest_vector(b"img:" + gray.tobytes(), VISUAL_DIM)]
        half = 16
        regions = []
        for qy in (0, half):
            for qx in (0, half):
                patch = gray[qy : qy + half, qx : qx + half]
                score = float(patch.std()) / 128.0  # pseudo detection confidence
                regions.append((score, patch))
        regions.sort(key=lambda r: -r[0])
        for score, patch in regions[: self.max_objects]:
            if score >= self.confidence * 0.1:  # hashed backend's own scale
                rows.append(_digest_vector(b"region:" + patch.tobytes(), VISUAL_DIM))
        return np.vstack(rows)


class PretrainedTextEncoder:
    """Frozen bidirectional transformer: [CLS] output plus token outputs."""

    def __init__(self, model_name: str = "bert-base-uncased", max_tokens: int = DEFAULT_MAX_TOKENS):
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise EncoderError(f"pretrained backend needs torch+transformers: {exc}") from exc
        self._torch = torch
        self.name = model_name
        self.max_tokens = max_tokens
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(model_name)
            self.model = AutoModel.from_pretrained(model_name).eval()
        except Exception as exc:
            raise EncoderError(f"cannot load text encoder {model_name!r}: {exc}") from exc

    def encode(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EncoderError("text is empty")
        torch = self._torch
        enc = self.tokenizer(
            text, truncation=True, max_length=self.max_tokens + 2, return_tensors="pt"
        )
        with torch.no_grad():
            hidden = self.model(**enc).last_hidden_state[0]
        ids = enc["input_ids"][0].tolist()
        keep = [
            i
            for i, tok in enumerate(ids)
            if tok not in self.tokenizer.all_special_ids
        ]
        if not keep:
            raise EncoderError("text has no tokens after tokenization")
        rows = hidden[keep][: self.max_tokens]
        cls = hidden[0:1]  # position 0 is [CLS]
        out = torch.cat([cls, rows]).cpu().numpy().astype(np.float32)
        if out.shape[1] != TEXT_DIM:
            raise EncoderError(f"{self.name} emits width {out.shape[1]}, need {TEXT_DIM}")
        return out


class PretrainedVisualEncoder:
    """Frozen detector + CNN trunk: whole-image feature and per-box crop
    features from the 2048-d penultimate layer."""

    def __init__(
        self,
        max_objects: int = DEFAULT_MAX_OBJECTS,
        confidence: float = DEFAULT_CONFIDENCE,
    ):
        try:
            import torch
            import torchvision
            from torchvision import transforms
        except ImportError as exc:
            raise EncoderError(f"pretrained backend needs torch+torchvision: {exc}") from exc
        self._torch = torch
        self.name = "fasterrcnn+resnet50"
        self.max_objects = max_objects
        self.confidence = confidence
        try:
            self.detector = torchvision.models.detection.fasterrcnn_resnet50_fpn(
                weights="DEFAULT"
            ).eval()
            trunk = torchvision.models.resnet50(weights="DEFAULT")
        except Exception as exc:
            raise EncoderError(f"cannot load vision models: {exc}") from exc
        trunk.fc = torch.nn.Identity()
        self.trunk = trunk.eval()
        self.preprocess = transforms.Compose(
            [
                transforms.Resize((224, 224)),
                transforms.ToTensor(),
                transforms.Normalize(
                    mean=[0.485, 0.456, 0.406], std=[0.229, 0.224, 0.225]
                ),
            ]
        )

    def _trunk_feature(self, image) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            feat = self.trunk(self.preprocess(image).unsqueeze(0))[0]
        return feat.cpu().numpy().astype(np.float32)

    def encode(self, image_path) -> np.ndarray:
        torch = self._torch
        try:
            with Image.open(image_path) as img:
                image = img.convert("RGB").copy()
        except OSError as exc:
            raise EncoderError(f"cannot decode image {image_path}: {exc}") from exc
        rows = [self._trunk_feature(image)]
        from torchvision import transforms

        with torch.no_grad():
            det = self.detector([transforms.ToTensor()(image)])[0]
        boxes = det["boxes"][det["scores"] >= self.confidence][: self.max_objects]
        for box in boxes.tolist():
            x0, y0, x1, y1 = [int(round(v)) for v in box]
            if x1 > x0 and y1 > y0:
                rows.append(self._trunk_feature(image.crop((x0, y0, x1, y1))))
        out = np.vstack(rows)
        if out.shape[1] != VISUAL_DIM:
            raise EncoderError(f"{self.name} emits width {out.shape[1]}, need {VISUAL_DIM}")
        return out


def make_encoders(
    backend: str,
    text_model: str = "bert-base-uncased",
    max_tokens: int = DEFAULT_MAX_TOKENS,
    max_objects: int = DEFAULT_MAX_OBJECTS,
    confidence: float = DEFAULT_CONFIDENCE,
):
    if backend == "hashed":
        return HashedTextEncoder(max_tokens), HashedVisualEncoder(max_objects, confidence)
    if backend == "pretrained":
        return (
            PretrainedTextEncoder(text_model, max_tokens),
            PretrainedVisualEncoder(max_objects, confidence),
        )
    raise EncoderError(f"unknown backend {backend!r}; expected 'pretrained' or 'hashed'")
