"""Network architecture: backbone with feature pyramid, anchor-free detection
head, RoI extraction, the two sequence-to-sequence modules, word embedding,
and the CTC classifier."""

from __future__ import annotations

import dataclasses
import hashlib
import math
import os
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torchvision
from torch import Tensor, nn

from . import detection
from .config import ModelConfig
from .detection import ProposalSet
from .errors import InvalidInputError
from .similarity import Word

CHECKPOINT_MAGIC = "wordseek-checkpoint"
CHECKPOINT_VERSION = 1


def _gn(channels: int) -> nn.GroupNorm:
    groups = 8
    while channels % groups:
        groups //= 2
    return nn.GroupNorm(groups, channels)


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.gn1 = _gn(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.gn2 = _gn(cout)
        self.relu = nn.ReLU(inplace=True)
        if stride != 1 or cin != cout:
            self.skip = nn.Sequential(nn.Conv2d(cin, cout, 1, stride=stride, bias=False), _gn(cout))
        else:
            self.skip = nn.Identity()

    def forward(self, x: Tensor) -> Tensor:
        out = self.relu(self.gn1(self.conv1(x)))
        out = self.gn2(self.conv2(out))
        return self.relu(out + self.skip(x))


class Backbone(nn.Module):
    """Small residual CNN with a top-down feature pyramid.

    Emits ``pyramid_levels`` maps at strides 4, 8 (and 16), each with
    ``out_channels`` channels.
    """

    def __init__(self, width: int, out_channels: int, levels: int):
        super().__init__()
        self.levels = levels
        self.stem = nn.Sequential(
            nn.Conv2d(3, width, 3, stride=2, padding=1, bias=False), _gn(width), nn.ReLU(inplace=True)
        )
        stage_channels = [width, 2 * width, 4 * width][:levels]
        stages = []
        cin = width
        for cout in stage_channels:
            stages.append(ResBlock(cin, cout, stride=2))
            cin = cout
        self.stages = nn.ModuleList(stages)
        self.laterals = nn.ModuleList(nn.Conv2d(c, out_channels, 1) for c in stage_channels)
        self.smooth = nn.ModuleList(
            nn.Conv2d(out_channels, out_channels, 3, padding=1) for _ in stage_channels
        )

    def forward(self, x: Tensor) -> list[Tensor]:
        x = self.stem(x)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        laterals = [lat(f) for lat, f in zip(self.laterals, feats)]
        for i in range(len(laterals) - 2, -1, -1):
            up = nn.functional.interpolate(laterals[i + 1], size=laterals[i].shape[-2:], mode="nearest")
            laterals[i] = laterals[i] + up
        return [smooth(lat) for smooth, lat in zip(self.smooth, laterals)]


class DetectionHead(nn.Module):
    """Shared tower plus text/box/centerness predictors for each level."""

    def __init__(self, channels: int, num_levels: int):
        super().__init__()
        self.tower = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            _gn(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
            _gn(channels),
            nn.ReLU(inplace=True),
        )
        self.cls = nn.Conv2d(channels, 1, 3, padding=1)
        self.reg = nn.Conv2d(channels, 4, 3, padding=1)
        self.ctr = nn.Conv2d(channels, 1, 3, padding=1)
        self.scales = nn.Parameter(torch.ones(num_levels))
        # rare-positive prior keeps early classification loss sane
        nn.init.constant_(self.cls.bias, -math.log((1 - 0.01) / 0.01))

    def forward(self, feats: list[Tensor]) -> tuple[list[Tensor], list[Tensor], list[Tensor]]:
        """Per level: cls logits (B, HW), ctr logits (B, HW), distances (B, HW, 4)."""
        cls_out, ctr_out, dist_out = [], [], []
        for level, feat in enumerate(feats):
            t = self.tower(feat)
            b = feat.shape[0]
            cls_out.append(self.cls(t).reshape(b, -1))
            ctr_out.append(self.ctr(t).reshape(b, -1))
            raw = self.reg(t).reshape(b, 4, -1).permute(0, 2, 1)
            stride = detection.STRIDES[level]
            # clamp keeps early-training distances finite (exp(8) strides cover
            # any plausible image size)
            scaled = (self.scales[level] * raw).clamp(min=-8.0, max=8.0)
            dist_out.append(torch.exp(scaled) * stride)
        return cls_out, ctr_out, dist_out


class ImageS2SM(nn.Module):
    """Two stride-(2,1) convolutions, average over height, then a BiLSTM."""

    def __init__(self, channels: int):
        super().__init__()
        c2 = 2 * channels
        self.conv = nn.Sequential(
            nn.Conv2d(c2, c2, 3, stride=(2, 1), padding=1),
            _gn(c2),
            nn.ReLU(inplace=True),
            nn.Conv2d(c2, c2, 3, stride=(2, 1), padding=1),
            _gn(c2),
            nn.ReLU(inplace=True),
        )
        self.lstm = nn.LSTM(c2, channels // 2, batch_first=True, bidirectional=True)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[0] == 0:
            t = x.shape[3]
            c = self.lstm.hidden_size * 2
            return x.new_zeros((0, t, c))
        x = self.conv(x)
        x = x.mean(dim=2)  # (K, 2C, T)
        # this torch build miscomputes conv/LSTM backward on non-contiguous inputs
        x = x.permute(0, 2, 1).contiguous()
        out, _ = self.lstm(x)
        return out


class TextS2SM(nn.Module):
    """1x1 convolution followed by a BiLSTM over the step axis."""

    def __init__(self, channels: int):
        super().__init__()
        c2 = 2 * channels
        self.conv = nn.Sequential(nn.Conv2d(c2, c2, 1), _gn(c2), nn.ReLU(inplace=True))
        self.lstm = nn.LSTM(c2, channels // 2, batch_first=True, bidirectional=True)

    def forward(self, x: Tensor) -> Tensor:
        # x: (N, T, 2C) viewed as (N, 2C, 1, T) for the convolution
        if x.shape[0] == 0:
            return x.new_zeros((0, x.shape[1], self.lstm.hidden_size * 2))
        h = x.permute(0, 2, 1).unsqueeze(2).contiguous()
        h = self.conv(h).squeeze(2).permute(0, 2, 1).contiguous()
        out, _ = self.lstm(h)
        return out


def interpolation_matrix(n: int, steps: int, dtype=torch.float32) -> Tensor:
    """(steps, n) linear-resampling weights with aligned endpoints."""
    weights = torch.zeros(steps, n, dtype=dtype)
    if n == 1:
        weights[:, 0] = 1.0
        return weights
    for j in range(steps):
        pos = j * (n - 1) / (steps - 1)
        lo = min(int(pos), n - 1)
        hi = min(lo + 1, n - 1)
        frac = pos - lo
        weights[j, lo] += 1.0 - frac
        weights[j, hi] += frac
    return weights


def resample_steps(seq: Tensor, steps: int) -> Tensor:
    """Linearly resample an (n, D) sequence to (steps, D) with aligned endpoints."""
    return interpolation_matrix(seq.shape[0], steps, dtype=seq.dtype) @ seq


class WordEmbedding(nn.Module):
    """Character embedding plus fixed-length resampling along the word axis."""

    def __init__(self, charset_size: int, channels: int, steps: int, max_word_len: int):
        super().__init__()
        self.embedding = nn.Embedding(charset_size, 2 * channels)
        self.steps = steps
        self.max_word_len = max_word_len
        self.charset_size = charset_size

    def forward(self, words: Sequence[Word]) -> Tensor:
        if len(words) == 0:
            raise InvalidInputError("need at least one word")
        rows = []
        for w in words:
            if len(w) > self.max_word_len:
                raise InvalidInputError(
                    f"word {w.text!r} has {len(w)} characters, max is {self.max_word_len}"
                )
            if any(i >= self.charset_size for i in w.indices):
                raise InvalidInputError(f"word {w.text!r} uses indices outside the model charset")
            emb = self.embedding(torch.tensor(w.indices, dtype=torch.long))
            rows.append(resample_steps(emb, self.steps))
        return torch.stack(rows)


class RetrievalNet(nn.Module):
    """Image branch, text branch, and the heads tying them together."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c2 = 2 * config.channels
        self.backbone = Backbone(config.backbone_width, c2, config.pyramid_levels)
        self.det_head = DetectionHead(c2, config.pyramid_levels)
        self.image_s2sm = ImageS2SM(config.channels)
        self.text_s2sm = TextS2SM(config.channels)
        self.word_embedding = WordEmbedding(
            config.charset_size, config.channels, config.steps, config.max_word_len
        )
        self.ctc_head = nn.Linear(config.channels, config.charset_size + 1)
        if config.with_phoc_head:
            phoc_dim = sum(config.phoc_pyramid) * config.charset_size
            self.phoc_head = nn.Linear(config.flattened_dim, phoc_dim)
        else:
            self.phoc_head = None

    # ----- image branch -----

    def backbone_features(self, images: Tensor) -> list[Tensor]:
        return self.backbone(images)

    def det_outputs(self, feats: list[Tensor]):
        return self.det_head(feats)

    def locations(self, feats: list[Tensor]) -> list[Tensor]:
        return [
            detection.level_locations(f.shape[2], f.shape[3], detection.STRIDES[i])
            for i, f in enumerate(feats)
        ]

    def detect(self, image: np.ndarray) -> ProposalSet:
        """Run detection on one (H, W, 3) image in [0, 1]."""
        if image.ndim != 3 or image.shape[2] != 3:
            raise InvalidInputError(f"expected (H, W, 3) image, got {image.shape}")
        if image.shape[0] < 64 or image.shape[1] < 64:
            raise InvalidInputError("image sides must be >= 64")
        tensor = torch.from_numpy(np.ascontiguousarray(image)).float().permute(2, 0, 1).unsqueeze(0).contiguous()
        with torch.no_grad():
            feats = self.backbone_features(tensor)
            cls, ctr, dist = self.det_outputs(feats)
            locs = self.locations(feats)
            return detection.decode_proposals(
                [c[0] for c in cls],
                [c[0] for c in ctr],
                [d[0] for d in dist],
                locs,
                image.shape[:2],
                self.config.score_thresh,
                self.config.nms_iou,
                self.config.max_proposals,
            )

    def roi_features(self, finest: Tensor, boxes_per_image: list[np.ndarray]) -> Tensor:
        """RoI-Align on the stride-4 map; output (K_total, 2C, roi_height, T)."""
        rois = []
        for b in boxes_per_image:
            b = np.asarray(b, dtype=np.float32).reshape(-1, 4)
            if np.any((b[:, 2] - b[:, 0]) <= 0) or np.any((b[:, 3] - b[:, 1]) <= 0):
                raise InvalidInputError("zero-area box in RoI extraction")
            rois.append(torch.from_numpy(b).to(finest.dtype))
        # sampling_ratio=1 keeps bin centers on cell centers, so boxes that
        # align with the feature grid reproduce cell values exactly
        return torchvision.ops.roi_align(
            finest,
            rois,
            output_size=(self.config.roi_height, self.config.steps),
            spatial_scale=1.0 / detection.STRIDES[0],
            sampling_ratio=1,
            aligned=True,
        )

    def proposal_features(self, roi: Tensor) -> Tensor:
        return self.image_s2sm(roi)

    # ----- text branch -----

    def embed_words(self, words: Sequence[Word]) -> Tensor:
        return self.word_embedding(words)

    def query_features(self, words: Sequence[Word]) -> Tensor:
        return self.text_s2sm(self.embed_words(words))

    # ----- heads -----

    def ctc_logits(self, features: Tensor) -> Tensor:
        """Per-step log-probabilities over charset plus blank, shape (K, T, V+1)."""
        return torch.log_softmax(self.ctc_head(features), dim=-1)

    def phoc_logits(self, features: Tensor) -> Tensor:
        if self.phoc_head is None:
            raise InvalidInputError("model was built without a PHOC head")
        return self.phoc_head(features.reshape(features.shape[0], -1))


def tanh_flatten_cosine(a: Tensor, b: Tensor) -> Tensor:
    """Differentiable twin of similarity.cosine_matrix for (n, T, C) tensors."""
    if a.shape[1:] != b.shape[1:]:
        raise InvalidInputError(f"feature shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    u = torch.tanh(a.reshape(a.shape[0], -1))
    v = torch.tanh(b.reshape(b.shape[0], -1))
    un = u.norm(dim=1, keepdim=True).clamp(min=1e-12)
    vn = v.norm(dim=1, keepdim=True).clamp(min=1e-12)
    return (u / un) @ (v / vn).T


def greedy_ctc_decode(log_probs: Tensor, blank: int) -> list[tuple[int, ...]]:
    """Argmax per step, collapse repeats, drop blanks."""
    steps = log_probs.argmax(dim=-1)
    out = []
    for row in steps.tolist():
        decoded = []
        prev = None
        for s in row:
            if s != prev and s != blank:
                decoded.append(s)
            prev = s
        out.append(tuple(decoded))
    return out


def save_checkpoint(model: RetrievalNet, path: str | Path) -> None:
    path = Path(path)
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "config": dataclasses.asdict(model.config),
        "state": model.state_dict(),
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> RetrievalNet:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("magic") != CHECKPOINT_MAGIC:
        raise InvalidInputError(f"{path} is not a model checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise InvalidInputError(f"unsupported checkpoint version {payload.get('version')}")
    cfg = dict(payload["config"])
    cfg["phoc_pyramid"] = tuple(cfg.get("phoc_pyramid", (2, 3, 4, 5)))
    model = RetrievalNet(ModelConfig(**cfg))
    model.load_state_dict(payload["state"])
    model.eval()
    return model


def checkpoint_fingerprint(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
