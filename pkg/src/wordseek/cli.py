"""Command-line entry point: data generation, training, indexing, retrieval,
evaluation, annotation, ablations, and the similarity histogram."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import model as model_mod
from . import retrieval as retrieval_mod
from . import synthgen
from .augment import EditOperatorRatios, augment_query_set, similarity_histogram
from .config import ModelConfig, TrainConfig, _field_types, train_config_from_items
from .errors import InvalidInputError
from .similarity import Charset, Word, words_from_texts
from .training import train as run_training

logger = logging.getLogger(__name__)

DEFAULT_SEED = 0

DEFAULT_LEXICON = (
    "google coffee motel hotel house mouse true cute taxi text "
    "train brain store stone phone plane apple maple cloud clown"
).split()

ABLATION_LABELS = {
    "baseline": "baseline",
    "+ctc": "no_was",
    "+was": "no_ctc",
    "+was+ctc": "joint",
    "joint": "joint",
    "separated": "separated",
    "phoc": "phoc_head",
    "phoc_head": "phoc_head",
    "no_pp_qq": "no_pp_qq",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n\n{self.format_help()}")


def _add_config_overrides(parser: argparse.ArgumentParser) -> None:
    keys = {**_field_types(TrainConfig), **_field_types(ModelConfig)}
    for key in sorted(keys):
        if key in ("model", "seed"):  # --seed is a shared top-level flag
            continue
        parser.add_argument(
            f"--{key.replace('_', '-')}",
            dest=f"cfg_{key}",
            metavar="VALUE",
            help=f"override config key '{key}'",
        )


def _resolve_train_config(args) -> TrainConfig:
    from .config import load_train_config

    cfg = load_train_config(args.config) if args.config else TrainConfig()
    items: dict[str, str] = {}
    for key in list(vars(args)):
        if key.startswith("cfg_") and getattr(args, key) is not None:
            items[key[4:]] = getattr(args, key)
    if args.seed is not None:
        items.setdefault("seed", str(args.seed))
    if items:
        cfg = train_config_from_items(items, base=cfg)
    return cfg


def _load_lexicon(args, charset: Charset) -> list[Word]:
    if getattr(args, "lexicon", None):
        texts = [t for t in Path(args.lexicon).read_text(encoding="utf-8").split() if t]
    elif getattr(args, "words", None):
        texts = [t for t in args.words.split(",") if t]
    else:
        texts = list(DEFAULT_LEXICON)
    return words_from_texts(texts, charset)


def _write_run_manifest(out_dir: Path, args, extra: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "command": args.command,
        "seed": args.seed if args.seed is not None else DEFAULT_SEED,
        "argv": sys.argv[1:],
        "options": {
            k: v for k, v in sorted(vars(args).items()) if k != "func" and v is not None
        },
    }
    if extra:
        doc.update(extra)
    (out_dir / "run_manifest.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8"
    )


def cmd_gen_data(args) -> None:
    charset = Charset.latin_lower()
    lexicon = _load_lexicon(args, charset)
    config = synthgen.RenderConfig(
        height=args.height,
        width=args.width,
        min_words=args.min_words,
        max_words=args.max_words,
    )
    seed = args.seed if args.seed is not None else DEFAULT_SEED
    rng = np.random.default_rng(seed)
    out_dir = Path(args.out)
    _write_run_manifest(out_dir, args)
    manifest = synthgen.generate_dataset(args.count, lexicon, config, out_dir, rng, charset)
    print(f"wrote {len(manifest.samples)} samples to {out_dir}")


def cmd_train(args) -> None:
    manifest = synthgen.load_manifest(Path(args.data))
    charset = Charset.load(manifest.charset_path(), fold_case=True)
    cfg = _resolve_train_config(args)
    if cfg.model.charset_size != len(charset):
        cfg = train_config_from_items({"charset_size": str(len(charset))}, base=cfg)
    out_dir = Path(args.out)
    from .config import train_config_to_items

    _write_run_manifest(out_dir, args, {"config": train_config_to_items(cfg)})
    result = run_training(cfg, manifest, out_dir)
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics: {result.metrics_path}")


def _open_gallery(args):
    manifest = synthgen.load_manifest(Path(args.data))
    images = [(s.image, manifest.image_path(s)) for s in manifest.samples]
    charset = Charset.load(manifest.charset_path(), fold_case=args.fold_case)
    return manifest, images, charset


def cmd_index(args) -> None:
    net = model_mod.load_checkpoint(args.checkpoint)
    det_net = model_mod.load_checkpoint(args.det_checkpoint) if args.det_checkpoint else None
    _, images, charset = _open_gallery(args)
    scales = tuple(int(s) for s in args.scales.split(","))
    index = retrieval_mod.index_gallery(
        net,
        images,
        scales,
        charset,
        fingerprint=model_mod.checkpoint_fingerprint(args.checkpoint),
        det_net=det_net,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    retrieval_mod.save_index(index, out)
    total = sum(len(e) for e in (entry.boxes for entry in index.entries))
    print(f"indexed {len(index.entries)} images ({total} proposals) -> {out}")


def cmd_retrieve(args) -> None:
    net = model_mod.load_checkpoint(args.checkpoint)
    index = retrieval_mod.load_index(args.index)
    charset = Charset(index.charset_symbols, fold_case=args.fold_case)
    query = Word.from_text(args.query, charset)
    result = retrieval_mod.rank_gallery(query, index, net)
    ranking = [
        {"image": image_id, "score": score, "box": list(box) if box else None}
        for image_id, score, box in result.ranked[: args.topk]
    ]
    doc = {"query": args.query, "ranking": ranking}
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)


def cmd_eval_map(args) -> None:
    net = model_mod.load_checkpoint(args.checkpoint)
    index = retrieval_mod.load_index(args.index)
    manifest = synthgen.load_manifest(Path(args.data))
    charset = Charset(index.charset_symbols, fold_case=args.fold_case)
    if args.queries:
        texts = [t for t in Path(args.queries).read_text(encoding="utf-8").split() if t]
    else:
        texts = sorted({inst.transcript.text for s in manifest.samples for inst in s.instances})
    queries = words_from_texts(texts, charset)
    relevant = retrieval_mod.relevance_from_manifest(manifest, fold_case=args.fold_case)
    value, per_query = retrieval_mod.mean_ap(queries, index, net, relevant, fold_case=args.fold_case)
    print(f"mAP: {value:.4f}")
    if args.out:
        doc = {"mAP": value, "per_query": per_query}
        Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_annotate(args) -> None:
    net = model_mod.load_checkpoint(args.checkpoint)
    det_net = model_mod.load_checkpoint(args.det_checkpoint) if args.det_checkpoint else None
    image = synthgen.load_image(Path(args.image))
    charset = Charset.latin_lower()
    words = words_from_texts([t for t in args.words.split(",") if t], charset)
    pairs = retrieval_mod.annotate(image, words, net, det_net=det_net)
    doc = [{"word": w.text, "box": list(box)} for w, box in pairs]
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)


def cmd_ablate(args) -> None:
    out_dir = Path(args.out)
    _write_run_manifest(out_dir, args)
    train_manifest = synthgen.load_manifest(Path(args.data))
    eval_manifest = synthgen.load_manifest(Path(args.eval_data))
    charset = Charset.load(train_manifest.charset_path(), fold_case=True)
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = []
    for label in args.modes.split(","):
        label = label.strip()
        if label not in ABLATION_LABELS:
            raise InvalidInputError(f"unknown ablation mode {label!r}")
        mode = ABLATION_LABELS[label]
        for seed in seeds:
            cfg = _resolve_train_config(args)
            items = {"mode": mode, "seed": str(seed), "charset_size": str(len(charset))}
            cfg = train_config_from_items(items, base=cfg)
            run_dir = out_dir / f"{mode}_seed{seed}"
            result = run_training(cfg, train_manifest, run_dir)
            value = _evaluate_checkpoint(result, eval_manifest, args)
            rows.append((label, mode, seed, value))
            print(f"{label} seed={seed}: mAP {value:.4f}")
    table = out_dir / "ablation.csv"
    with open(table, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["label", "mode", "seed", "mAP"])
        for row in rows:
            writer.writerow([row[0], row[1], row[2], f"{row[3]:.6f}"])
    print(f"wrote {table}")


def _evaluate_checkpoint(result, eval_manifest, args) -> float:
    net = model_mod.load_checkpoint(result.checkpoint_path)
    det_net = (
        model_mod.load_checkpoint(result.det_checkpoint_path)
        if result.det_checkpoint_path
        else None
    )
    charset = Charset.load(eval_manifest.charset_path(), fold_case=True)
    images = [(s.image, eval_manifest.image_path(s)) for s in eval_manifest.samples]
    scales = tuple(int(s) for s in args.scales.split(","))
    index = retrieval_mod.index_gallery(net, images, scales, charset, det_net=det_net)
    queries = sorted({inst.transcript.text for s in eval_manifest.samples for inst in s.instances})
    relevant = retrieval_mod.relevance_from_manifest(eval_manifest)
    if net.config.with_phoc_head:
        value, _ = _phoc_map(net, index, queries, charset, relevant)
    else:
        value, _ = retrieval_mod.mean_ap(words_from_texts(queries, charset), index, net, relevant)
    return value


def _phoc_map(net, index, queries, charset, relevant):
    """mAP with ranking by predicted-PHOC cosine instead of learned similarity."""
    import torch

    from . import phoc as phoc_mod
    from .retrieval import average_precision

    per_query = {}
    levels = net.config.phoc_pyramid
    predicted = {}
    for entry in index.entries:
        if len(entry.features) == 0:
            predicted[entry.image_id] = None
            continue
        with torch.no_grad():
            logits = net.phoc_logits(torch.from_numpy(entry.features))
            predicted[entry.image_id] = torch.sigmoid(logits).numpy()
    for text in queries:
        rel_ids = relevant.get(text, set())
        if not rel_ids:
            continue
        word = Word.from_text(text, charset)
        scored = []
        for entry in index.entries:
            vectors = predicted[entry.image_id]
            if vectors is None:
                scored.append((entry.image_id, -1.0))
                continue
            image_score, _ = phoc_mod.phoc_rank(word, list(vectors), charset, levels)
            scored.append((entry.image_id, image_score))
        scored.sort(key=lambda t: (-t[1], t[0]))
        flags = [1 if image_id in rel_ids else 0 for image_id, _ in scored]
        per_query[text] = average_precision(flags)
    value = float(np.mean(list(per_query.values())))
    return value, per_query


def cmd_plot_hist(args) -> None:
    charset = Charset.latin_lower()
    seed = args.seed if args.seed is not None else DEFAULT_SEED
    rng = np.random.default_rng(seed)
    if args.random:
        lengths = rng.integers(3, 9, size=args.random)
        words = [
            Word(charset, tuple(int(c) for c in rng.integers(0, len(charset), size=n)))
            for n in lengths
        ]
    else:
        words = _load_lexicon(args, charset)
    if args.augment:
        ratios = EditOperatorRatios(*(float(x) for x in args.ratios.split(",")))
        words = augment_query_set(words, ratios, charset, rng)
    freqs = similarity_histogram(words, args.bins)
    out_dir = Path(args.out)
    _write_run_manifest(out_dir, args)
    edges = np.linspace(0.0, 1.0, args.bins + 1)
    csv_path = out_dir / "hist.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["bin_low", "bin_high", "frequency"])
        for lo, hi, freq in zip(edges[:-1], edges[1:], freqs):
            writer.writerow([f"{lo:.4f}", f"{hi:.4f}", f"{freq:.6f}"])
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar(edges[:-1], freqs, width=np.diff(edges), align="edge", edgecolor="black")
    ax.set_xlabel("pairwise similarity")
    ax.set_ylabel("frequency")
    fig.tight_layout()
    fig.savefig(out_dir / "hist.png", dpi=120)
    plt.close(fig)
    print(f"wrote {csv_path} and {out_dir / 'hist.png'}")


def build_parser() -> _Parser:
    parser = _Parser(prog="wordseek", description=__doc__)
    parser.add_argument("--verbose", action="store_true", help="enable debug logging")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(p):
        p.add_argument("--seed", type=int, default=None, help=f"random seed (default {DEFAULT_SEED})")
        p.add_argument("--config", default=None, help="flat key=value config file")

    p = sub.add_parser("gen-data", help="render a synthetic scene-text dataset")
    common(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--count", type=int, default=50, help="number of images to render")
    p.add_argument("--lexicon", default=None, help="lexicon file, one word per line")
    p.add_argument("--words", default=None, help="comma-separated lexicon words")
    p.add_argument("--height", type=int, default=128, help="canvas height in pixels")
    p.add_argument("--width", type=int, default=128, help="canvas width in pixels")
    p.add_argument("--min-words", type=int, default=1, help="minimum words per image")
    p.add_argument("--max-words", type=int, default=3, help="maximum words per image")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    common(p)
    p.add_argument("--data", required=True, help="path to annotations.json")
    p.add_argument("--out", required=True, help="output run directory")
    _add_config_overrides(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("index", help="build a gallery index from a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True, help="model checkpoint path")
    p.add_argument("--det-checkpoint", default=None, help="separate detector checkpoint")
    p.add_argument("--data", required=True, help="gallery annotations.json")
    p.add_argument("--out", required=True, help="output index file")
    p.add_argument("--scales", default="128", help="comma-separated long-side test scales")
    p.add_argument("--fold-case", action="store_true", default=True, help="case-fold text")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("retrieve", help="rank a gallery index for one query word")
    common(p)
    p.add_argument("--checkpoint", required=True, help="model checkpoint path")
    p.add_argument("--index", required=True, help="gallery index file")
    p.add_argument("--query", required=True, help="query word")
    p.add_argument("--topk", type=int, default=10, help="ranking entries to report")
    p.add_argument("--fold-case", action="store_true", default=True, help="case-fold the query")
    p.add_argument("--out", default=None, help="optional JSON output path")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("eval-map", help="evaluate mean average precision on an index")
    common(p)
    p.add_argument("--checkpoint", required=True, help="model checkpoint path")
    p.add_argument("--index", required=True, help="gallery index file")
    p.add_argument("--data", required=True, help="annotations.json with ground truth")
    p.add_argument("--queries", default=None, help="optional query list file")
    p.add_argument("--fold-case", action="store_true", default=True, help="case-fold queries")
    p.add_argument("--out", default=None, help="optional JSON output path")
    p.set_defaults(func=cmd_eval_map)

    p = sub.add_parser("annotate", help="locate known words in one image")
    common(p)
    p.add_argument("--checkpoint", required=True, help="model checkpoint path")
    p.add_argument("--det-checkpoint", default=None, help="separate detector checkpoint")
    p.add_argument("--image", required=True, help="image file")
    p.add_argument("--words", required=True, help="comma-separated words known to appear")
    p.add_argument("--out", default=None, help="optional JSON output path")
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("ablate", help="train and compare ablation modes")
    common(p)
    p.add_argument("--data", required=True, help="training annotations.json")
    p.add_argument("--eval-data", required=True, help="evaluation annotations.json")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument(
        "--modes",
        default="baseline,+ctc,+was,+was+ctc",
        help="comma-separated modes: baseline,+ctc,+was,+was+ctc,separated,phoc,no_pp_qq",
    )
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--scales", default="128", help="comma-separated test scales")
    _add_config_overrides(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot-hist", help="pairwise-similarity histogram of a lexicon")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--lexicon", default=None, help="lexicon file, one word per line")
    p.add_argument("--words", default=None, help="comma-separated lexicon words")
    p.add_argument("--random", type=int, default=0, help="use N random words instead")
    p.add_argument("--bins", type=int, default=10, help="number of histogram bins")
    p.add_argument("--augment", action="store_true", help="augment the lexicon first")
    p.add_argument("--ratios", default="1,1,1,5", help="insert,delete,replace,keep weights")
    p.set_defaults(func=cmd_plot_hist)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        args.func(args)
    except Exception as exc:  # runtime failure
        logger.error("%s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
