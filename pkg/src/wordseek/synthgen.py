"""Synthetic scene-text dataset generation.

Small procedural scenes: flat-color backgrounds with low-frequency gradients
and Gaussian noise, plus horizontally rendered words from an embedded bitmap
font. Every placement records a tight box and transcript.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from . import glyphs
from .errors import InvalidInputError
from .similarity import Charset, Word


@dataclass(eq=False)
class TextInstance:
    box: tuple[int, int, int, int]  # x0, y0, x1, y1; region = image[y0:y1, x0:x1]
    transcript: Word

    def __post_init__(self):
        x0, y0, x1, y1 = self.box
        if not (x0 < x1 and y0 < y1):
            raise InvalidInputError(f"degenerate box {self.box}")


@dataclass(eq=False)
class SceneSample:
    image: np.ndarray  # (H, W, 3) float in [0, 1]
    instances: list[TextInstance]

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise InvalidInputError(f"expected (H, W, 3) image, got {self.image.shape}")
        h, w = self.image.shape[:2]
        for inst in self.instances:
            x0, y0, x1, y1 = inst.box
            if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
                raise InvalidInputError(f"box {inst.box} outside {w}x{h} image")


@dataclass
class RenderConfig:
    height: int = 128
    width: int = 128
    min_words: int = 1
    max_words: int = 3
    scales: tuple[int, ...] = (2, 3)
    margin: int = 2
    gap: int = 2  # minimum pixel separation between word boxes
    noise_sigma: float = 0.015
    min_contrast: float = 0.3
    max_place_tries: int = 25

    def __post_init__(self):
        if self.height < 64 or self.width < 64:
            raise InvalidInputError("canvas must be at least 64x64")
        if self.min_words < 0 or self.max_words < self.min_words:
            raise InvalidInputError("bad word-count range")


@dataclass
class WordDraw:
    """Parameters of one rendered word, enough to re-render the patch."""

    text: str
    scale: int
    fg: np.ndarray
    background: np.ndarray  # the pre-noise background region under the patch
    position: tuple[int, int]  # x0, y0


def _tight_mask(text: str) -> np.ndarray:
    mask = glyphs.text_mask(text)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return mask[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]


def render_word_patch(draw: WordDraw) -> np.ndarray:
    """Glyph ink composited over the draw's background region (no noise)."""
    mask = _tight_mask(draw.text)
    mask = np.kron(mask, np.ones((draw.scale, draw.scale), dtype=bool))
    patch = draw.background.copy()
    patch[mask] = draw.fg
    return patch


def _background(config: RenderConfig, rng: np.random.Generator) -> np.ndarray:
    base = rng.uniform(0.25, 0.75, size=3)
    img = np.tile(base, (config.height, config.width, 1))
    # one low-frequency gradient per axis
    gy = rng.uniform(-0.1, 0.1)
    gx = rng.uniform(-0.1, 0.1)
    ramp_y = np.linspace(-1.0, 1.0, config.height)[:, None, None]
    ramp_x = np.linspace(-1.0, 1.0, config.width)[None, :, None]
    img = img + gy * ramp_y + gx * ramp_x
    return np.clip(img, 0.0, 1.0)


def _pick_fg(region: np.ndarray, config: RenderConfig, rng: np.random.Generator) -> np.ndarray:
    gray = float(region.mean())
    direction = -1.0 if gray > 0.5 else 1.0
    headroom = gray if direction < 0 else 1.0 - gray
    lo = config.min_contrast
    hi = max(lo + 1e-6, 0.95 * headroom)
    delta = direction * rng.uniform(lo, min(hi, 0.6) if hi > lo else hi)
    fg = region.mean(axis=(0, 1)) + delta + rng.uniform(-0.05, 0.05, size=3)
    return np.clip(fg, 0.0, 1.0)


def _separated(box: tuple[int, int, int, int], others: list[tuple[int, int, int, int]], gap: int) -> bool:
    x0, y0, x1, y1 = box
    for ox0, oy0, ox1, oy1 in others:
        if x0 < ox1 + gap and ox0 < x1 + gap and y0 < oy1 + gap and oy0 < y1 + gap:
            return False
    return True


def render_sample(
    lexicon: Sequence[Word],
    config: RenderConfig,
    rng: np.random.Generator,
    forced_words: Sequence[Word] = (),
    return_draws: bool = False,
):
    """Render one scene. Words that cannot fit at the minimum scale are skipped."""
    if not lexicon and not forced_words:
        raise InvalidInputError("lexicon must be non-empty")
    image = _background(config, rng)
    h, w = config.height, config.width
    count = int(rng.integers(config.min_words, config.max_words + 1))
    count = max(count, len(forced_words))
    instances: list[TextInstance] = []
    draws: list[WordDraw] = []
    boxes: list[tuple[int, int, int, int]] = []
    for k in range(count):
        if k < len(forced_words):
            word = forced_words[k]
        else:
            word = lexicon[int(rng.integers(0, len(lexicon)))]
        mask = _tight_mask(word.text)
        feasible = [
            s
            for s in config.scales
            if mask.shape[1] * s <= w - 2 * config.margin
            and mask.shape[0] * s <= h - 2 * config.margin
        ]
        if not feasible:
            continue  # too long even at minimum scale: skip, never clip
        scale = int(rng.choice(feasible))
        ph, pw = mask.shape[0] * scale, mask.shape[1] * scale
        placed = None
        for _ in range(config.max_place_tries):
            x0 = int(rng.integers(config.margin, w - pw - config.margin + 1))
            y0 = int(rng.integers(config.margin, h - ph - config.margin + 1))
            box = (x0, y0, x0 + pw, y0 + ph)
            if _separated(box, boxes, config.gap):
                placed = box
                break
        if placed is None:
            continue
        x0, y0, x1, y1 = placed
        region = image[y0:y1, x0:x1].copy()
        fg = _pick_fg(region, config, rng)
        draw = WordDraw(text=word.text, scale=scale, fg=fg, background=region, position=(x0, y0))
        image[y0:y1, x0:x1] = render_word_patch(draw)
        boxes.append(placed)
        instances.append(TextInstance(box=placed, transcript=word))
        draws.append(draw)
    if config.noise_sigma > 0:
        image = image + rng.normal(0.0, config.noise_sigma, size=image.shape)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    sample = SceneSample(image=image, instances=instances)
    if return_draws:
        return sample, draws
    return sample


@dataclass
class SampleRecord:
    image: str  # path relative to the manifest directory
    instances: list[TextInstance]


@dataclass
class GalleryManifest:
    root: Path
    charset_file: str
    samples: list[SampleRecord] = field(default_factory=list)

    def charset_path(self) -> Path:
        return self.root / self.charset_file

    def image_path(self, sample: SampleRecord) -> Path:
        return self.root / sample.image


def save_image(image: np.ndarray, path: Path) -> None:
    arr = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def load_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def save_manifest(manifest: GalleryManifest, path: Path) -> None:
    doc = {
        "charset_file": manifest.charset_file,
        "samples": [
            {
                "image": s.image,
                "instances": [
                    {"box": list(inst.box), "text": inst.transcript.text}
                    for inst in s.instances
                ],
            }
            for s in manifest.samples
        ],
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_manifest(path: Path, fold_case: bool = True) -> GalleryManifest:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    root = path.parent
    charset = Charset.load(root / doc["charset_file"], fold_case=fold_case)
    samples = []
    for s in doc["samples"]:
        image = s["image"]
        if not (root / image).exists():
            raise InvalidInputError(f"manifest references missing image {image}")
        instances = [
            TextInstance(box=tuple(i["box"]), transcript=Word.from_text(i["text"], charset))
            for i in s["instances"]
        ]
        samples.append(SampleRecord(image=image, instances=instances))
    return GalleryManifest(root=root, charset_file=doc["charset_file"], samples=samples)


def generate_dataset(
    n: int,
    lexicon: Sequence[Word],
    config: RenderConfig,
    out_dir: Path,
    rng: np.random.Generator,
    charset: Charset,
) -> GalleryManifest:
    """Write n rendered images plus one annotation file; returns the manifest.

    The first word of sample i cycles through the lexicon so every word is
    guaranteed to appear when n >= len(lexicon).
    """
    if n < 1:
        raise InvalidInputError("need n >= 1 samples")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    charset.save(out_dir / "charset.txt")
    (out_dir / "lexicon.txt").write_text(
        "\n".join(w.text for w in lexicon) + "\n", encoding="utf-8"
    )
    manifest = GalleryManifest(root=out_dir, charset_file="charset.txt")
    for i in range(n):
        forced = [lexicon[i % len(lexicon)]]
        sample = render_sample(lexicon, config, rng, forced_words=forced)
        rel = f"images/img_{i:05d}.png"
        save_image(sample.image, out_dir / rel)
        manifest.samples.append(SampleRecord(image=rel, instances=sample.instances))
    save_manifest(manifest, out_dir / "annotations.json")
    return manifest
