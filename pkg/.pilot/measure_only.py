import sys
import numpy as np
import torch
from pathlib import Path
sys.path.insert(0, "/root/pkg/src")
from wordseek.model import load_checkpoint, greedy_ctc_decode
from wordseek.retrieval import detection_f_measure
from wordseek.similarity import Charset
from wordseek.synthgen import load_manifest, load_image

root = Path("/root/pkg/.pilot")
charset = Charset.latin_lower()
net = load_checkpoint(sys.argv[1])
manifest = load_manifest(sys.argv[2])
fs, ok, tot = [], 0, 0
for s in manifest.samples:
    img = load_image(manifest.image_path(s))
    props = net.detect(img)
    gt = np.array([i.box for i in s.instances], dtype=np.float32)
    fs.append(detection_f_measure(props.boxes, gt)[2])
    t = torch.from_numpy(img).permute(2,0,1).unsqueeze(0).contiguous()
    with torch.no_grad():
        feats = net.backbone_features(t)
        e = net.proposal_features(net.roi_features(feats[0], [gt]))
        dec = greedy_ctc_decode(net.ctc_logits(e), charset.blank_index)
    for d, inst in zip(dec, s.instances):
        tot += 1; ok += int(d == inst.transcript.indices)
print(f"F={np.mean(fs):.3f} ctc={ok}/{tot}")
