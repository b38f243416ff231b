"""Gallery indexing, query-time ranking, mAP evaluation, and the weakly
supervised annotation application."""

from __future__ import annotations

import logging
import pickle
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from PIL import Image

from . import detection
from .errors import InvalidInputError, UndefinedAPError
from .model import RetrievalNet, tanh_flatten_cosine
from .similarity import Charset, Word
from .synthgen import GalleryManifest

logger = logging.getLogger(__name__)

INDEX_MAGIC = b"wordseek-index-v1\n"


@dataclass(eq=False)
class GalleryEntry:
    image_id: str
    boxes: np.ndarray  # (K, 4) in original image coordinates
    scores: np.ndarray  # (K,)
    features: np.ndarray  # (K, T, C)

    def __post_init__(self):
        if len(self.boxes) != len(self.features):
            raise InvalidInputError("feature count must equal proposal count")


@dataclass(eq=False)
class GalleryIndex:
    entries: list[GalleryEntry]
    charset_symbols: tuple[str, ...]
    fingerprint: str
    steps: int
    channels: int
    scales: tuple[int, ...]
    skipped: list[str] = field(default_factory=list)


@dataclass(eq=False)
class RetrievalResult:
    query: Word
    ranked: list[tuple[str, float, tuple[float, float, float, float] | None]]


def save_index(index: GalleryIndex, path: str | Path) -> None:
    with open(path, "wb") as f:
        f.write(INDEX_MAGIC)
        pickle.dump(index, f)


def load_index(path: str | Path) -> GalleryIndex:
    with open(path, "rb") as f:
        magic = f.read(len(INDEX_MAGIC))
        if magic != INDEX_MAGIC:
            raise InvalidInputError(f"{path} is not a gallery index")
        return pickle.load(f)


def _resize_long_side(image: np.ndarray, target: int) -> tuple[np.ndarray, float]:
    h, w = image.shape[:2]
    factor = target / max(h, w)
    nh, nw = max(64, round(h * factor)), max(64, round(w * factor))
    if (nh, nw) == (h, w):
        return image, 1.0
    pil = Image.fromarray(np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8))
    resized = np.asarray(pil.resize((nw, nh), Image.BILINEAR), dtype=np.float32) / 255.0
    return resized, nw / w


def _image_features(net: RetrievalNet, image: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    tensor = torch.from_numpy(np.ascontiguousarray(image)).float().permute(2, 0, 1).unsqueeze(0).contiguous()
    with torch.no_grad():
        feats = net.backbone_features(tensor)
        roi = net.roi_features(feats[0], [boxes])
        return net.proposal_features(roi).numpy()


def index_gallery(
    net: RetrievalNet,
    images: Sequence[tuple[str, np.ndarray | Path]],
    scales: Sequence[int],
    charset: Charset,
    fingerprint: str = "",
    det_net: RetrievalNet | None = None,
) -> GalleryIndex:
    """Detect, pool across scales, and featurize every gallery image.

    ``images`` pairs an image id with either a loaded array or a path.
    ``det_net`` supplies proposals when detection and retrieval were trained
    separately; otherwise ``net`` does both.
    """
    if len(images) == 0:
        raise InvalidInputError("gallery must contain at least one image")
    if len(scales) == 0:
        raise InvalidInputError("need at least one test scale")
    detector = det_net if det_net is not None else net
    entries: list[GalleryEntry] = []
    skipped: list[str] = []
    for image_id, source in images:
        if isinstance(source, np.ndarray):
            image = source
        else:
            try:
                with Image.open(source) as im:
                    image = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
            except (OSError, ValueError) as exc:
                logger.warning("skipping unreadable image %s: %s", image_id, exc)
                skipped.append(image_id)
                continue
        boxes_all, scores_all, feats_all = [], [], []
        for scale in scales:
            resized, factor = _resize_long_side(image, scale)
            props = detector.detect(resized)
            if len(props) == 0:
                continue
            feats = _image_features(net, resized, props.boxes)
            boxes_all.append(props.boxes / factor)
            scores_all.append(props.scores)
            feats_all.append(feats)
        if boxes_all:
            entry = GalleryEntry(
                image_id=image_id,
                boxes=np.concatenate(boxes_all),
                scores=np.concatenate(scores_all),
                features=np.concatenate(feats_all),
            )
        else:
            t, c = net.config.steps, net.config.channels
            entry = GalleryEntry(
                image_id=image_id,
                boxes=np.zeros((0, 4), dtype=np.float32),
                scores=np.zeros(0, dtype=np.float32),
                features=np.zeros((0, t, c), dtype=np.float32),
            )
        entries.append(entry)
    return GalleryIndex(
        entries=entries,
        charset_symbols=charset.symbols,
        fingerprint=fingerprint,
        steps=net.config.steps,
        channels=net.config.channels,
        scales=tuple(scales),
        skipped=skipped,
    )


def score_image(
    query_feature: np.ndarray, entry: GalleryEntry
) -> tuple[float, tuple[float, float, float, float] | None]:
    """Max cosine over the entry's proposals; empty entries score -1."""
    if len(entry.features) == 0:
        return -1.0, None
    q = torch.from_numpy(np.asarray(query_feature, dtype=np.float32)).unsqueeze(0)
    e = torch.from_numpy(entry.features.astype(np.float32))
    sims = tanh_flatten_cosine(q, e)[0].numpy()
    best = int(sims.argmax())
    return float(sims[best]), tuple(float(v) for v in entry.boxes[best])


def rank_gallery(query: Word, index: GalleryIndex, net: RetrievalNet) -> RetrievalResult:
    """All images scored and sorted descending; ties broken by image id."""
    if any(i >= len(index.charset_symbols) for i in query.indices):
        raise InvalidInputError("query uses symbols outside the index charset")
    with torch.no_grad():
        q_feat = net.query_features([query])[0].numpy()
    scored = []
    for entry in index.entries:
        score, box = score_image(q_feat, entry)
        scored.append((entry.image_id, score, box))
    scored.sort(key=lambda t: (-t[1], t[0]))
    return RetrievalResult(query=query, ranked=scored)


def average_precision(relevance: Sequence[int]) -> float:
    """Mean of precision@k over the relevant positions of a ranked list."""
    hits = 0
    precisions = []
    for k, rel in enumerate(relevance, start=1):
        if rel:
            hits += 1
            precisions.append(hits / k)
    if not precisions:
        raise UndefinedAPError("no relevant items in ranking")
    return sum(precisions) / len(precisions)


def relevance_from_manifest(manifest: GalleryManifest, fold_case: bool = True) -> dict[str, set[str]]:
    """query text -> set of relevant image ids (exact transcript match)."""
    relevant: dict[str, set[str]] = {}
    for s in manifest.samples:
        for inst in s.instances:
            text = inst.transcript.text.lower() if fold_case else inst.transcript.text
            relevant.setdefault(text, set()).add(s.image)
    return relevant


def mean_ap(
    queries: Sequence[Word],
    index: GalleryIndex,
    net: RetrievalNet,
    relevant: dict[str, set[str]],
    fold_case: bool = True,
) -> tuple[float, dict[str, float]]:
    """Unweighted mean AP over queries with at least one relevant image."""
    if len(queries) == 0:
        raise InvalidInputError("need at least one query")
    per_query: dict[str, float] = {}
    for query in queries:
        text = query.text.lower() if fold_case else query.text
        rel_ids = relevant.get(text, set())
        if not rel_ids:
            logger.warning("query %r has no relevant images; excluded from mAP", text)
            continue
        result = rank_gallery(query, index, net)
        flags = [1 if image_id in rel_ids else 0 for image_id, _, _ in result.ranked]
        per_query[text] = average_precision(flags)
    if not per_query:
        raise UndefinedAPError("no evaluable queries")
    return float(np.mean(list(per_query.values()))), per_query


def annotate(
    image: np.ndarray, words: Sequence[Word], net: RetrievalNet, det_net: RetrievalNet | None = None
) -> list[tuple[Word, tuple[float, float, float, float]]]:
    """Box of the most similar proposal for each word known to be in the image."""
    detector = det_net if det_net is not None else net
    props = detector.detect(image)
    if len(props) == 0:
        if words:
            logger.warning("no proposals; %d word(s) left unannotated", len(words))
        return []
    feats = _image_features(net, image, props.boxes)
    out = []
    with torch.no_grad():
        q = net.query_features(list(words))
        sims = tanh_flatten_cosine(q, torch.from_numpy(feats)).numpy()
    for i, word in enumerate(words):
        best = int(sims[i].argmax())
        out.append((word, tuple(float(v) for v in props.boxes[best])))
    return out


def detection_f_measure(
    pred_boxes: np.ndarray, gt_boxes: np.ndarray, iou_thresh: float = 0.5
) -> tuple[float, float, float]:
    """Greedy one-to-one matching at the IoU threshold, in descending IoU order."""
    if not 0.0 < iou_thresh < 1.0:
        raise InvalidInputError("iou_thresh must be in (0, 1)")
    pred_boxes = np.asarray(pred_boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    if len(pred_boxes) == 0 or len(gt_boxes) == 0:
        return 0.0, 0.0, 0.0
    ious = detection.iou_matrix(pred_boxes, gt_boxes)
    order = np.dstack(np.unravel_index(np.argsort(-ious, axis=None), ious.shape))[0]
    used_pred: set[int] = set()
    used_gt: set[int] = set()
    matches = 0
    for pi, gi in order:
        if ious[pi, gi] < iou_thresh:
            break
        if pi in used_pred or gi in used_gt:
            continue
        used_pred.add(int(pi))
        used_gt.add(int(gi))
        matches += 1
    precision = matches / len(pred_boxes)
    recall = matches / len(gt_boxes)
    f = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f
