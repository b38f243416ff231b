"""Anchor-free detection: per-pixel classification, distance-to-sides box
regression and centerness, with decoding and NMS."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torchvision
from torch import Tensor

from .errors import InvalidInputError

# max(l, t, r, b) ranges that assign a target box to a pyramid level
SIZE_RANGES = {
    2: ((-1.0, 64.0), (64.0, float("inf"))),
    3: ((-1.0, 48.0), (48.0, 96.0), (96.0, float("inf"))),
}
STRIDES = (4, 8, 16)

INF = 1e8


@dataclass(eq=False)
class ProposalSet:
    boxes: np.ndarray  # (K, 4) xyxy
    scores: np.ndarray  # (K,) in [0, 1], descending

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float32).reshape(-1, 4)
        self.scores = np.asarray(self.scores, dtype=np.float32).reshape(-1)
        if len(self.boxes) != len(self.scores):
            raise InvalidInputError("boxes and scores must have equal length")
        if len(self.scores) > 1 and np.any(np.diff(self.scores) > 1e-6):
            raise InvalidInputError("scores must be non-increasing")

    def __len__(self) -> int:
        return len(self.boxes)

    @classmethod
    def empty(cls) -> "ProposalSet":
        return cls(boxes=np.zeros((0, 4), dtype=np.float32), scores=np.zeros(0, dtype=np.float32))


def level_locations(height: int, width: int, stride: int) -> Tensor:
    """Image-plane centers of every cell of a feature level, shape (H*W, 2)."""
    ys = (torch.arange(height, dtype=torch.float32) + 0.5) * stride
    xs = (torch.arange(width, dtype=torch.float32) + 0.5) * stride
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([gx.reshape(-1), gy.reshape(-1)], dim=1)


def decode_boxes(locations: Tensor, distances: Tensor) -> Tensor:
    """(x, y) plus (l, t, r, b) distances -> xyxy boxes."""
    x, y = locations[:, 0], locations[:, 1]
    l, t, r, b = distances.unbind(dim=1)
    return torch.stack([x - l, y - t, x + r, y + b], dim=1)


def box_distances(locations: Tensor, boxes: Tensor) -> Tensor:
    """(L, M, 4) distances from each location to each box's sides."""
    x = locations[:, 0][:, None]
    y = locations[:, 1][:, None]
    l = x - boxes[None, :, 0]
    t = y - boxes[None, :, 1]
    r = boxes[None, :, 2] - x
    b = boxes[None, :, 3] - y
    return torch.stack([l, t, r, b], dim=2)


def centerness_targets(distances: Tensor) -> Tensor:
    l, t, r, b = distances.unbind(dim=1)
    lr = torch.minimum(l, r) / torch.clamp(torch.maximum(l, r), min=1e-9)
    tb = torch.minimum(t, b) / torch.clamp(torch.maximum(t, b), min=1e-9)
    return torch.sqrt(lr * tb)


def assign_targets(
    locations_per_level: list[Tensor],
    gt_boxes: Tensor,
    size_ranges: tuple[tuple[float, float], ...],
    center_radius: float = 0.0,
) -> tuple[Tensor, Tensor, Tensor]:
    """Per-location targets across all levels.

    Returns (labels (L,), reg_targets (L, 4), matched_box_index (L,)); labels
    are 1 for text locations, 0 for background. Locations inside several boxes
    take the smallest-area one. With ``center_radius`` > 0, positives are
    further restricted to cells within radius*stride of the box center, which
    sharpens the score map considerably.
    """
    all_labels, all_regs, all_idx = [], [], []
    for level, (locs, (lo, hi)) in enumerate(zip(locations_per_level, size_ranges)):
        n = locs.shape[0]
        if gt_boxes.numel() == 0:
            all_labels.append(torch.zeros(n))
            all_regs.append(torch.zeros(n, 4))
            all_idx.append(torch.full((n,), -1, dtype=torch.long))
            continue
        dist = box_distances(locs, gt_boxes)  # (L, M, 4)
        inside = dist.min(dim=2).values > 0
        if center_radius > 0:
            radius = center_radius * STRIDES[level]
            cx = (gt_boxes[:, 0] + gt_boxes[:, 2]) / 2
            cy = (gt_boxes[:, 1] + gt_boxes[:, 3]) / 2
            near_x = (locs[:, 0][:, None] - cx[None, :]).abs() <= radius
            near_y = (locs[:, 1][:, None] - cy[None, :]).abs() <= radius
            inside = inside & near_x & near_y
        max_dist = dist.max(dim=2).values
        in_range = (max_dist > lo) & (max_dist <= hi)
        areas = (gt_boxes[:, 2] - gt_boxes[:, 0]) * (gt_boxes[:, 3] - gt_boxes[:, 1])
        candidate_areas = areas[None, :].expand(n, -1).clone()
        candidate_areas[~(inside & in_range)] = INF
        best_area, best_idx = candidate_areas.min(dim=1)
        positive = best_area < INF
        labels = positive.float()
        reg = dist[torch.arange(n), best_idx]
        reg[~positive] = 0.0
        best_idx = torch.where(positive, best_idx, torch.full_like(best_idx, -1))
        all_labels.append(labels)
        all_regs.append(reg)
        all_idx.append(best_idx)
    return torch.cat(all_labels), torch.cat(all_regs), torch.cat(all_idx)


def iou_loss(pred: Tensor, target: Tensor) -> Tensor:
    """-log IoU between (l, t, r, b) distance vectors, elementwise over rows."""
    pl, pt, pr, pb = pred.unbind(dim=1)
    tl, tt, tr, tb = target.unbind(dim=1)
    pred_area = (pl + pr) * (pt + pb)
    target_area = (tl + tr) * (tt + tb)
    iw = torch.minimum(pl, tl) + torch.minimum(pr, tr)
    ih = torch.minimum(pt, tt) + torch.minimum(pb, tb)
    inter = iw.clamp(min=0) * ih.clamp(min=0)
    union = pred_area + target_area - inter
    iou = inter / union.clamp(min=1e-9)
    return -torch.log(iou.clamp(min=1e-9))


def detection_loss(
    cls_logits: Tensor,  # (L,)
    ctr_logits: Tensor,  # (L,)
    pred_distances: Tensor,  # (L, 4)
    labels: Tensor,
    reg_targets: Tensor,
) -> tuple[Tensor, dict[str, float]]:
    """Focal classification + IoU regression + BCE centerness, summed."""
    pos = labels > 0.5
    num_pos = max(int(pos.sum()), 1)
    cls = torchvision.ops.sigmoid_focal_loss(
        cls_logits, labels, alpha=0.25, gamma=2.0, reduction="sum"
    ) / num_pos
    if pos.any():
        ctr_t = centerness_targets(reg_targets[pos])
        reg = (iou_loss(pred_distances[pos], reg_targets[pos]) * ctr_t).sum() / ctr_t.sum().clamp(
            min=1e-9
        )
        ctr = torch.nn.functional.binary_cross_entropy_with_logits(
            ctr_logits[pos], ctr_t, reduction="mean"
        )
    else:
        reg = pred_distances.sum() * 0.0
        ctr = ctr_logits.sum() * 0.0
    total = cls + reg + ctr
    parts = {"cls": float(cls.detach()), "reg": float(reg.detach()), "ctr": float(ctr.detach())}
    return total, parts


def decode_proposals(
    cls_logits: list[Tensor],  # per level, (H*W,)
    ctr_logits: list[Tensor],
    distances: list[Tensor],  # per level, (H*W, 4), image units
    locations: list[Tensor],
    image_size: tuple[int, int],  # (H, W)
    score_thresh: float,
    nms_iou: float,
    max_proposals: int,
) -> ProposalSet:
    """Score-threshold, clip, NMS, and truncate; score = cls prob * centerness."""
    h, w = image_size
    boxes_all, scores_all = [], []
    for cls, ctr, dist, locs in zip(cls_logits, ctr_logits, distances, locations):
        scores = torch.sigmoid(cls) * torch.sigmoid(ctr)
        keep = scores > score_thresh
        if not keep.any():
            continue
        boxes = decode_boxes(locs[keep], dist[keep])
        boxes[:, 0::2] = boxes[:, 0::2].clamp(0, w)
        boxes[:, 1::2] = boxes[:, 1::2].clamp(0, h)
        boxes_all.append(boxes)
        scores_all.append(scores[keep])
    if not boxes_all:
        return ProposalSet.empty()
    boxes = torch.cat(boxes_all)
    scores = torch.cat(scores_all)
    valid = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
    boxes, scores = boxes[valid], scores[valid]
    if boxes.numel() == 0:
        return ProposalSet.empty()
    keep = torchvision.ops.nms(boxes, scores, nms_iou)[:max_proposals]
    return ProposalSet(boxes=boxes[keep].numpy(), scores=scores[keep].numpy())


def iou_matrix(boxes1: np.ndarray, boxes2: np.ndarray) -> np.ndarray:
    """Pairwise IoU of two (N, 4) / (M, 4) xyxy arrays."""
    boxes1 = np.asarray(boxes1, dtype=np.float64).reshape(-1, 4)
    boxes2 = np.asarray(boxes2, dtype=np.float64).reshape(-1, 4)
    a1 = (boxes1[:, 2] - boxes1[:, 0]) * (boxes1[:, 3] - boxes1[:, 1])
    a2 = (boxes2[:, 2] - boxes2[:, 0]) * (boxes2[:, 3] - boxes2[:, 1])
    iw = np.minimum(boxes1[:, None, 2], boxes2[None, :, 2]) - np.maximum(
        boxes1[:, None, 0], boxes2[None, :, 0]
    )
    ih = np.minimum(boxes1[:, None, 3], boxes2[None, :, 3]) - np.maximum(
        boxes1[:, None, 1], boxes2[None, :, 1]
    )
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = a1[:, None] + a2[None, :] - inter
    return inter / np.maximum(union, 1e-12)
