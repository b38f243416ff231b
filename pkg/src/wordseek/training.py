"""Joint optimization of detection, similarity, and CTC objectives, plus the
separated-training and PHOC-head ablations."""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import Tensor

from . import detection, model as model_mod, phoc as phoc_mod, similarity
from .augment import EditOperatorRatios, augment_query_set
from .config import TrainConfig
from .errors import InvalidInputError, TrainingFailureError
from .model import RetrievalNet, tanh_flatten_cosine
from .similarity import Charset, Word
from .synthgen import GalleryManifest, TextInstance, load_image, load_manifest

METRICS_HEADER = ("iteration", "L_d", "L_s", "L_c", "L", "lr")


@dataclass
class TrainResult:
    checkpoint_path: Path
    metrics_path: Path
    det_checkpoint_path: Path | None = None
    final_loss: float = float("nan")


def build_queries(
    transcripts: Sequence[Word],
    ratios: EditOperatorRatios,
    charset: Charset,
    rng: np.random.Generator,
    use_was: bool = True,
    max_len: int | None = None,
) -> tuple[list[Word], list[Word]] | None:
    """Deduplicated batch transcripts plus their augmented query set.

    Returns None (skip-batch signal) when the batch carries no text.
    """
    if len(transcripts) == 0:
        return None
    seen: dict[tuple[int, ...], Word] = {}
    for w in transcripts:
        seen.setdefault(w.indices, w)
    queries = list(seen.values())
    if use_was:
        augmented = augment_query_set(queries, ratios, charset, rng, max_len=max_len)
    else:
        augmented = list(queries)
    return queries, augmented


def match_proposals(
    proposal_boxes: np.ndarray, gt_instances: Sequence[TextInstance], iou_thresh: float = 0.5
) -> tuple[np.ndarray, list[Word]]:
    """Proposals with IoU >= threshold against their best ground-truth box.

    Many proposals may match one instance; unmatched proposals are dropped.
    """
    proposal_boxes = np.asarray(proposal_boxes, dtype=np.float32).reshape(-1, 4)
    if len(proposal_boxes) == 0 or len(gt_instances) == 0:
        return np.zeros((0, 4), dtype=np.float32), []
    gt_boxes = np.array([inst.box for inst in gt_instances], dtype=np.float32)
    ious = detection.iou_matrix(proposal_boxes, gt_boxes)
    best = ious.argmax(axis=1)
    keep = ious[np.arange(len(proposal_boxes)), best] >= iou_thresh
    words = [gt_instances[j].transcript for j in best[keep]]
    return proposal_boxes[keep], words


def smooth_l1(x: Tensor, beta: float = 1.0) -> Tensor:
    absx = x.abs()
    return torch.where(absx < beta, 0.5 * x * x / beta, absx - 0.5 * beta)


def _pair_term(pred: Tensor, target: Tensor, row_reduce: str) -> Tensor:
    if pred.shape != target.shape:
        raise InvalidInputError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    elementwise = smooth_l1(pred - target)
    if row_reduce == "max":
        rows = elementwise.max(dim=1).values
    else:
        rows = elementwise.mean(dim=1)
    return rows.mean()


def loss_similarity(
    pred_qp: Tensor,
    target_qp: Tensor,
    pred_pp: Tensor | None = None,
    target_pp: Tensor | None = None,
    pred_qq: Tensor | None = None,
    target_qq: Tensor | None = None,
    row_reduce: str = "max",
) -> Tensor:
    """Smooth-L1 between predicted and target similarity rows.

    Each matrix contributes the mean over rows of a per-row reduction (max by
    default) of the elementwise loss; the three contributions are summed. The
    assistant P-P and Q-Q pairs are optional so the ablation without them
    computes only the query-proposal term.
    """
    total = _pair_term(pred_qp, target_qp, row_reduce)
    if pred_pp is not None:
        total = total + _pair_term(pred_pp, target_pp, row_reduce)
    if pred_qq is not None:
        total = total + _pair_term(pred_qq, target_qq, row_reduce)
    return total


def loss_total(l_d: Tensor | float, l_s: Tensor | float, l_c: Tensor | float) -> Tensor:
    parts = {"L_d": l_d, "L_s": l_s, "L_c": l_c}
    for name, value in parts.items():
        v = float(value.detach()) if torch.is_tensor(value) else float(value)
        if v != v or v in (float("inf"), float("-inf")):
            raise TrainingFailureError(f"{name} is not finite ({v})")
    out = l_d + l_s + l_c
    if not torch.is_tensor(out):
        out = torch.tensor(float(out))
    return out


def lr_at(iteration: int, config: TrainConfig) -> float:
    if iteration < config.warmup_iterations:
        ramp = (iteration + 1) / config.warmup_iterations
        return config.lr * (0.1 + 0.9 * ramp)
    drops = sum(1 for s in config.decay_steps if iteration >= s)
    return config.lr * (config.decay_factor**drops)


def target_tensor(rows: Sequence[Word], cols: Sequence[Word]) -> Tensor:
    return torch.from_numpy(similarity.target_matrix(rows, cols).values).float()


class _Dataset:
    """Preloaded images and annotations, with cached detection targets."""

    def __init__(self, manifest: GalleryManifest, pyramid_levels: int, center_radius: float = 0.0):
        if not manifest.samples:
            raise InvalidInputError("manifest has no samples")
        self.images: list[Tensor] = []
        self.instances: list[list[TextInstance]] = []
        shapes = set()
        for s in manifest.samples:
            arr = load_image(manifest.image_path(s))
            shapes.add(arr.shape)
            self.images.append(torch.from_numpy(arr).permute(2, 0, 1).contiguous())
            self.instances.append(list(s.instances))
        if len(shapes) != 1:
            raise InvalidInputError("training requires equally sized images")
        self.image_size = self.images[0].shape[1:]
        self.size_ranges = detection.SIZE_RANGES[pyramid_levels]
        self.center_radius = center_radius
        self._targets: dict[int, tuple[Tensor, Tensor]] = {}

    def __len__(self) -> int:
        return len(self.images)

    def det_targets(self, index: int, locations: list[Tensor]) -> tuple[Tensor, Tensor]:
        if index not in self._targets:
            boxes = torch.tensor(
                [inst.box for inst in self.instances[index]], dtype=torch.float32
            ).reshape(-1, 4)
            labels, regs, _ = detection.assign_targets(
                locations, boxes, self.size_ranges, self.center_radius
            )
            self._targets[index] = (labels, regs)
        return self._targets[index]


def _batch_detection_loss(locations, dataset, indices, cls, ctr, dist):
    losses = []
    for b, idx in enumerate(indices):
        labels, regs = dataset.det_targets(idx, locations)
        per_cls = torch.cat([c[b] for c in cls])
        per_ctr = torch.cat([c[b] for c in ctr])
        per_dist = torch.cat([d[b] for d in dist])
        loss, _ = detection.detection_loss(per_cls, per_ctr, per_dist, labels, regs)
        losses.append(loss)
    return torch.stack(losses).mean()


def _training_proposals(
    net, dataset, indices, cls, ctr, dist, locations, config
) -> tuple[list[np.ndarray], list[list[Word]]]:
    """Decoded proposals matched to ground truth, with GT boxes always injected."""
    boxes_per_image, words_per_image = [], []
    h, w = dataset.image_size
    for b, idx in enumerate(indices):
        with torch.no_grad():
            props = detection.decode_proposals(
                [c[b] for c in cls],
                [c[b] for c in ctr],
                [d[b] for d in dist],
                locations,
                (int(h), int(w)),
                net.config.score_thresh,
                net.config.nms_iou,
                config.train_proposals,
            )
        gt = dataset.instances[idx]
        matched_boxes, matched_words = match_proposals(props.boxes, gt)
        gt_boxes = np.array([inst.box for inst in gt], dtype=np.float32).reshape(-1, 4)
        gt_words = [inst.transcript for inst in gt]
        boxes_per_image.append(np.concatenate([gt_boxes, matched_boxes], axis=0))
        words_per_image.append(gt_words + matched_words)
    return boxes_per_image, words_per_image


def _ctc_loss(net, features: Tensor, words: Sequence[Word], blank: int) -> Tensor:
    log_probs = net.ctc_logits(features).permute(1, 0, 2)  # (T, K, V+1)
    targets = torch.tensor([i for w in words for i in w.indices], dtype=torch.long)
    input_lengths = torch.full((len(words),), log_probs.shape[0], dtype=torch.long)
    target_lengths = torch.tensor([len(w) for w in words], dtype=torch.long)
    return torch.nn.functional.ctc_loss(
        log_probs, targets, input_lengths, target_lengths, blank=blank, zero_infinity=True
    )


def _write_metrics(rows: list[tuple], path: Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_HEADER)
        for it, ld, ls, lc, lt, lr in rows:
            writer.writerow([it, f"{ld:.6f}", f"{ls:.6f}", f"{lc:.6f}", f"{lt:.6f}", f"{lr:.6g}"])


def _dump_state(net, rows, out_dir: Path) -> None:
    model_mod.save_checkpoint(net, out_dir / "diverged.pt")
    _write_metrics(rows, out_dir / "metrics.csv")


def _sample_batch(rng, dataset, batch_size: int) -> list[int]:
    for _ in range(10):
        indices = [int(i) for i in rng.integers(0, len(dataset), size=batch_size)]
        if any(dataset.instances[i] for i in indices):
            return indices
    return indices  # all-empty dataset: caller copes


def train(
    config: TrainConfig, manifest: GalleryManifest | str | Path, out_dir: str | Path
) -> TrainResult:
    """Run the configured optimization and write checkpoints plus a metrics log."""
    if not isinstance(manifest, GalleryManifest):
        manifest = load_manifest(Path(manifest))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    charset = Charset.load(manifest.charset_path(), fold_case=True)
    if config.model.charset_size != len(charset):
        raise InvalidInputError(
            f"model charset_size {config.model.charset_size} != dataset charset {len(charset)}"
        )
    if config.mode == "separated":
        return _train_separated(config, manifest, charset, out_dir)
    return _train_single(config, manifest, charset, out_dir)


def _train_single(
    config: TrainConfig,
    manifest: GalleryManifest,
    charset: Charset,
    out_dir: Path,
    detector_only: bool = False,
    gt_boxes_only: bool = False,
    metrics_rows: list | None = None,
    iteration_offset: int = 0,
    checkpoint_name: str = "checkpoint.pt",
    seed_offset: int = 0,
) -> TrainResult:
    torch.manual_seed(config.seed + seed_offset)
    rng = np.random.default_rng(config.seed + seed_offset)
    model_cfg = config.model
    if config.mode == "phoc_head" and not model_cfg.with_phoc_head:
        model_cfg = dataclasses.replace(model_cfg, with_phoc_head=True)
    net = RetrievalNet(model_cfg)
    net.train()
    dataset = _Dataset(manifest, model_cfg.pyramid_levels, config.center_sampling_radius)
    optimizer = torch.optim.SGD(
        net.parameters(), lr=config.lr, momentum=config.momentum, weight_decay=config.weight_decay
    )
    ratios = EditOperatorRatios(*config.ratios)
    rows = metrics_rows if metrics_rows is not None else []
    checkpoint_path = out_dir / checkpoint_name
    metrics_path = out_dir / "metrics.csv"
    locations = None
    total_value = float("nan")

    for it in range(config.iterations):
        lr = lr_at(it, config)
        for group in optimizer.param_groups:
            group["lr"] = lr
        indices = _sample_batch(rng, dataset, config.batch_size)
        images = torch.stack([dataset.images[i] for i in indices])
        feats = net.backbone_features(images)
        if locations is None:
            locations = net.locations(feats)
        cls, ctr, dist = net.det_outputs(feats)

        if detector_only:
            l_d = _batch_detection_loss(locations, dataset, indices, cls, ctr, dist)
            l_s = torch.tensor(0.0)
            l_c = torch.tensor(0.0)
        else:
            if gt_boxes_only:
                l_d = torch.tensor(0.0)
                boxes_per_image = [
                    np.array([inst.box for inst in dataset.instances[i]], dtype=np.float32).reshape(
                        -1, 4
                    )
                    for i in indices
                ]
                words_per_image = [[inst.transcript for inst in dataset.instances[i]] for i in indices]
            else:
                l_d = _batch_detection_loss(locations, dataset, indices, cls, ctr, dist)
                boxes_per_image, words_per_image = _training_proposals(
                    net, dataset, indices, cls, ctr, dist, locations, config
                )
            proposal_words = [w for words in words_per_image for w in words]
            nonempty = [b for b in boxes_per_image if len(b)]
            if proposal_words and nonempty:
                roi = net.roi_features(feats[0], boxes_per_image)
                e_feat = net.proposal_features(roi)
                if config.mode == "phoc_head":
                    l_s = _phoc_loss(net, e_feat, proposal_words, charset, model_cfg)
                    l_c = torch.tensor(0.0)
                else:
                    built = build_queries(
                        proposal_words,
                        ratios,
                        charset,
                        rng,
                        use_was=config.use_was,
                        max_len=model_cfg.max_word_len,
                    )
                    queries, augmented = built
                    f_feat = net.query_features(augmented)
                    pred_qp = tanh_flatten_cosine(f_feat, e_feat)
                    tgt_qp = target_tensor(augmented, proposal_words)
                    if config.use_pp_qq:
                        pred_pp = tanh_flatten_cosine(e_feat, e_feat)
                        tgt_pp = target_tensor(proposal_words, proposal_words)
                        pred_qq = tanh_flatten_cosine(f_feat, f_feat)
                        tgt_qq = target_tensor(augmented, augmented)
                    else:
                        pred_pp = tgt_pp = pred_qq = tgt_qq = None
                    l_s = loss_similarity(
                        pred_qp, tgt_qp, pred_pp, tgt_pp, pred_qq, tgt_qq, config.row_reduce
                    )
                    l_c = (
                        _ctc_loss(net, e_feat, proposal_words, charset.blank_index)
                        if config.use_ctc
                        else torch.tensor(0.0)
                    )
            else:
                l_s = torch.tensor(0.0)
                l_c = torch.tensor(0.0)

        try:
            total = loss_total(l_d, l_s, l_c)
        except TrainingFailureError:
            _dump_state(net, rows, out_dir)
            raise
        optimizer.zero_grad()
        total.backward()
        if config.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(net.parameters(), config.grad_clip)
        optimizer.step()
        total_value = float(total.detach())
        if (it + 1) % config.log_interval == 0:
            rows.append(
                (
                    iteration_offset + it + 1,
                    float(l_d.detach()) if torch.is_tensor(l_d) else float(l_d),
                    float(l_s.detach()) if torch.is_tensor(l_s) else float(l_s),
                    float(l_c.detach()) if torch.is_tensor(l_c) else float(l_c),
                    total_value,
                    lr,
                )
            )
        if (it + 1) % config.checkpoint_interval == 0:
            model_mod.save_checkpoint(net, checkpoint_path)

    net.eval()
    model_mod.save_checkpoint(net, checkpoint_path)
    if metrics_rows is None:
        _write_metrics(rows, metrics_path)
    return TrainResult(
        checkpoint_path=checkpoint_path, metrics_path=metrics_path, final_loss=total_value
    )


def _phoc_loss(net, e_feat: Tensor, words: Sequence[Word], charset: Charset, model_cfg) -> Tensor:
    logits = net.phoc_logits(e_feat)
    targets = torch.stack(
        [
            torch.from_numpy(
                phoc_mod.phoc_encode(w, charset, model_cfg.phoc_pyramid).bits.astype(np.float32)
            )
            for w in words
        ]
    )
    return torch.nn.functional.binary_cross_entropy_with_logits(logits, targets)


def _train_separated(
    config: TrainConfig, manifest: GalleryManifest, charset: Charset, out_dir: Path
) -> TrainResult:
    """Detector and retrieval network trained independently.

    The detector sees only the detection loss; the retrieval network trains on
    ground-truth boxes with the similarity and CTC losses. At inference the
    detector supplies boxes and the retrieval network supplies features.
    """
    rows: list = []
    det = _train_single(
        config,
        manifest,
        charset,
        out_dir,
        detector_only=True,
        metrics_rows=rows,
        checkpoint_name="checkpoint_det.pt",
    )
    ret = _train_single(
        config,
        manifest,
        charset,
        out_dir,
        gt_boxes_only=True,
        metrics_rows=rows,
        iteration_offset=config.iterations,
        checkpoint_name="checkpoint.pt",
        seed_offset=1,
    )
    metrics_path = out_dir / "metrics.csv"
    _write_metrics(rows, metrics_path)
    return TrainResult(
        checkpoint_path=ret.checkpoint_path,
        metrics_path=metrics_path,
        det_checkpoint_path=det.checkpoint_path,
        final_loss=ret.final_loss,
    )
