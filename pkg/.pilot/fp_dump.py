import sys
import numpy as np
from pathlib import Path
sys.path.insert(0, "/root/pkg/src")
from wordseek.model import load_checkpoint
from wordseek.detection import iou_matrix
from wordseek.synthgen import load_manifest, load_image

root = Path("/root/pkg/.pilot")
net = load_checkpoint(root / "overfit_b4_i1500/checkpoint.pt")
manifest = load_manifest(root / "overfit_ds/annotations.json")
for s in manifest.samples[:3]:
    img = load_image(manifest.image_path(s))
    props = net.detect(img)
    gt = np.array([i.box for i in s.instances], dtype=np.float32)
    ious = iou_matrix(props.boxes, gt) if len(props) else np.zeros((0, len(gt)))
    print(f"== {s.image}: {len(gt)} gt, {len(props)} proposals")
    for g in gt:
        print("   GT", [round(float(v),1) for v in g])
    for b, sc, iou_row in zip(props.boxes, props.scores, ious):
        print(f"   box {[round(float(v),1) for v in b]} score={sc:.3f} bestIoU={iou_row.max():.2f}")
