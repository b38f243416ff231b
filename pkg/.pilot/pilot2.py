import sys, time, json
import numpy as np
from pathlib import Path

sys.path.insert(0, "/root/pkg/src")
from wordseek.cli import DEFAULT_LEXICON
from wordseek.config import ModelConfig, TrainConfig
from wordseek.retrieval import index_gallery, mean_ap, relevance_from_manifest, detection_f_measure
from wordseek.similarity import Charset, words_from_texts
from wordseek.synthgen import load_manifest, load_image
from wordseek.training import train
from wordseek.model import load_checkpoint
import torch

root = Path("/root/pkg/.pilot")
charset = Charset.latin_lower()
lexicon = words_from_texts(DEFAULT_LEXICON, charset)

channels, width, iters, batch, seed = (int(x) for x in sys.argv[1:6])
mode = sys.argv[6] if len(sys.argv) > 6 else "joint"
model_cfg = ModelConfig(channels=channels, backbone_width=width, steps=15, roi_height=8,
                        charset_size=36, score_thresh=0.1, max_proposals=100)
cfg = TrainConfig(iterations=iters, batch_size=batch, seed=seed, mode=mode,
                  decay_steps=(int(iters*0.6), int(iters*0.85)),
                  checkpoint_interval=100000, model=model_cfg)
run_dir = root / f"run2_{mode}_c{channels}_w{width}_i{iters}_b{batch}_s{seed}"
t0 = time.time()
manifest = load_manifest(root / "train_ds/annotations.json")
result = train(cfg, manifest, run_dir)
t1 = time.time()
print(f"[{run_dir.name}] train: {t1-t0:.0f}s final_loss={result.final_loss:.3f}", flush=True)

net = load_checkpoint(result.checkpoint_path)
det_net = load_checkpoint(result.det_checkpoint_path) if result.det_checkpoint_path else None
test_manifest = load_manifest(root / "test_ds/annotations.json")
images = [(s.image, test_manifest.image_path(s)) for s in test_manifest.samples]
index = index_gallery(net, images, scales=(128,), charset=charset, det_net=det_net)
relevant = relevance_from_manifest(test_manifest)
value, per_query = mean_ap(lexicon, index, net, relevant)
fs = []
detector = det_net or net
for s in test_manifest.samples[:25]:
    img = load_image(test_manifest.image_path(s))
    props = detector.detect(img)
    gt = np.array([i.box for i in s.instances], dtype=np.float32)
    fs.append(detection_f_measure(props.boxes, gt)[2])
print(f"[{run_dir.name}] mAP={value:.4f} detF={np.mean(fs):.3f} evalT={time.time()-t1:.0f}s", flush=True)
