import sys, time
import numpy as np
import torch
from pathlib import Path

sys.path.insert(0, "/root/pkg/src")
from wordseek.model import load_checkpoint, greedy_ctc_decode
from wordseek.retrieval import detection_f_measure, index_gallery, mean_ap, relevance_from_manifest
from wordseek.similarity import Charset, words_from_texts, target_matrix
from wordseek.synthgen import load_manifest, load_image
from wordseek.model import tanh_flatten_cosine

root = Path("/root/pkg/.pilot")
ckpt = sys.argv[1]
net = load_checkpoint(ckpt)
charset = Charset.latin_lower()
test_manifest = load_manifest(root / "test_ds/annotations.json")

# 1. detection quality
fs, ctc_ok, ctc_total = [], 0, 0
sim_diag = []
for s in test_manifest.samples[:25]:
    img = load_image(test_manifest.image_path(s))
    props = net.detect(img)
    gt = np.array([i.box for i in s.instances], dtype=np.float32)
    p, r, f = detection_f_measure(props.boxes, gt)
    fs.append(f)
    # CTC on GT boxes
    t = torch.from_numpy(img).permute(2,0,1).unsqueeze(0).contiguous()
    with torch.no_grad():
        feats = net.backbone_features(t)
        e = net.proposal_features(net.roi_features(feats[0], [gt]))
        lp = net.ctc_logits(e)
        dec = greedy_ctc_decode(lp, charset.blank_index)
        for d, inst in zip(dec, s.instances):
            ctc_total += 1
            ctc_ok += int(d == inst.transcript.indices)
        # similarity: query features vs gt-box features
        words = [i.transcript for i in s.instances]
        f_feat = net.query_features(words)
        pred = tanh_flatten_cosine(f_feat, e).numpy()
        tgt = target_matrix(words, words).values
        sim_diag.append((pred.round(2), tgt.round(2)))
print("detection F@0.5 mean:", round(float(np.mean(fs)), 4))
print("ctc greedy acc on GT boxes:", ctc_ok, "/", ctc_total)
print("example pred vs target sim:")
for p, t in sim_diag[:3]:
    print("pred:", p.tolist())
    print("tgt :", t.tolist())
