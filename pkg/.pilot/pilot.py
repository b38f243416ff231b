import sys, time, json
import numpy as np
import torch
from pathlib import Path

sys.path.insert(0, "/root/pkg/src")
from wordseek.cli import DEFAULT_LEXICON
from wordseek.config import ModelConfig, TrainConfig
from wordseek.retrieval import index_gallery, mean_ap, relevance_from_manifest
from wordseek.similarity import Charset, words_from_texts
from wordseek.synthgen import RenderConfig, generate_dataset, load_manifest
from wordseek.training import train
from wordseek.model import load_checkpoint

root = Path("/root/pkg/.pilot")
charset = Charset.latin_lower()
lexicon = words_from_texts(DEFAULT_LEXICON, charset)
render = RenderConfig(height=128, width=128, min_words=1, max_words=3)

train_dir = root / "train_ds"
test_dir = root / "test_ds"
if not (train_dir / "annotations.json").exists():
    generate_dataset(200, lexicon, render, train_dir, np.random.default_rng(100), charset)
    generate_dataset(50, lexicon, render, test_dir, np.random.default_rng(200), charset)
    print("datasets generated", flush=True)

channels, width, iters, seed = (int(x) for x in sys.argv[1:5])
mode = sys.argv[5] if len(sys.argv) > 5 else "joint"
model_cfg = ModelConfig(channels=channels, backbone_width=width, steps=15, roi_height=8,
                        charset_size=36, score_thresh=0.1, max_proposals=100)
cfg = TrainConfig(iterations=iters, batch_size=2, seed=seed, mode=mode,
                  decay_steps=(int(iters*0.6), int(iters*0.85)),
                  checkpoint_interval=100000, model=model_cfg)
run_dir = root / f"run_{mode}_c{channels}_w{width}_i{iters}_s{seed}"
t0 = time.time()
manifest = load_manifest(train_dir / "annotations.json")
result = train(cfg, manifest, run_dir)
t1 = time.time()
print(f"train {mode} c{channels} w{width} i{iters} s{seed}: {t1-t0:.0f}s final_loss={result.final_loss:.3f}", flush=True)

net = load_checkpoint(result.checkpoint_path)
det_net = load_checkpoint(result.det_checkpoint_path) if result.det_checkpoint_path else None
test_manifest = load_manifest(test_dir / "annotations.json")
images = [(s.image, test_manifest.image_path(s)) for s in test_manifest.samples]
index = index_gallery(net, images, scales=(128,), charset=charset, det_net=det_net)
relevant = relevance_from_manifest(test_manifest)
value, per_query = mean_ap(lexicon, index, net, relevant)
t2 = time.time()
print(f"eval: {t2-t1:.0f}s mAP={value:.4f}", flush=True)
worst = sorted(per_query.items(), key=lambda kv: kv[1])[:5]
print("worst queries:", [(k, round(v,3)) for k, v in worst], flush=True)
