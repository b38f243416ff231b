import sys, time
import numpy as np
import torch
from pathlib import Path

sys.path.insert(0, "/root/pkg/src")
from wordseek.cli import DEFAULT_LEXICON
from wordseek.config import ModelConfig, TrainConfig
from wordseek.retrieval import detection_f_measure
from wordseek.similarity import Charset, words_from_texts
from wordseek.synthgen import RenderConfig, generate_dataset, load_manifest, load_image
from wordseek.training import train
from wordseek.model import load_checkpoint, greedy_ctc_decode

root = Path("/root/pkg/.pilot")
charset = Charset.latin_lower()
lexicon = words_from_texts(DEFAULT_LEXICON, charset)
render = RenderConfig(height=128, width=128, min_words=1, max_words=3)
ds = root / "overfit_ds"
if not (ds / "annotations.json").exists():
    generate_dataset(10, lexicon, render, ds, np.random.default_rng(300), charset)
manifest = load_manifest(ds / "annotations.json")

batch = int(sys.argv[1]); iters = int(sys.argv[2])
model_cfg = ModelConfig(channels=32, backbone_width=16, steps=15, roi_height=8,
                        charset_size=36, score_thresh=0.1, max_proposals=100)
cfg = TrainConfig(iterations=iters, batch_size=batch, seed=0, mode="joint",
                  decay_steps=(int(iters*0.6), int(iters*0.85)), checkpoint_interval=10**9, model=model_cfg)
t0 = time.time()
res = train(cfg, manifest, root / f"overfit_b{batch}_i{iters}")
print(f"train {time.time()-t0:.0f}s loss={res.final_loss:.3f}", flush=True)
net = load_checkpoint(res.checkpoint_path)
ps, rs, fs, ok, tot = [], [], [], 0, 0
for s in manifest.samples:
    img = load_image(manifest.image_path(s))
    props = net.detect(img)
    gt = np.array([i.box for i in s.instances], dtype=np.float32)
    p, r, f = detection_f_measure(props.boxes, gt)
    ps.append(p); rs.append(r); fs.append(f)
    t = torch.from_numpy(img).permute(2,0,1).unsqueeze(0).contiguous()
    with torch.no_grad():
        feats = net.backbone_features(t)
        e = net.proposal_features(net.roi_features(feats[0], [gt]))
        dec = greedy_ctc_decode(net.ctc_logits(e), charset.blank_index)
    for d, inst in zip(dec, s.instances):
        tot += 1; ok += int(d == inst.transcript.indices)
print(f"b{batch} i{iters}: P={np.mean(ps):.3f} R={np.mean(rs):.3f} F={np.mean(fs):.3f} ctc={ok}/{tot}", flush=True)
