"""From six extreme points to a trinary pseudo-mask, one step at a time.

Run:  python3 demos/pseudo_mask_walkthrough.py
"""
import numpy as np

from extremeseg.seeds import RwConfig, build_scribbles, generate_initial_mask
from extremeseg.synth import SynthSpec, extract_extremes, gen_case
from extremeseg.volume import bbox_from_extremes

rng = np.random.default_rng(7)
volume, gt = gen_case(SynthSpec(), rng)
extremes = extract_extremes(gt)
box = bbox_from_extremes(extremes)
print(f"volume dims {volume.dims}, lesion voxels {int(gt.sum())}")
print(f"bounding box from the extreme points: {box}")

scribbles = build_scribbles(volume, extremes, RwConfig()).astype(bool)
print(f"scribbles: {int(scribbles.sum())} voxels, "
      f"{100 * (scribbles & gt).sum() / scribbles.sum():.1f}% inside the lesion")

history = []
mask = generate_initial_mask(volume, extremes, RwConfig(), history=history)
for i, h in enumerate(history):
    print(f"random-walker solve {i + 1}: {h}")

fg, unknown = mask == 1, mask == 2
print(f"label 1 (confident lesion): {int(fg.sum())} voxels, precision {(fg & gt).sum() / fg.sum():.3f}, "
      f"recall {(fg & gt).sum() / gt.sum():.3f}")
print(f"label 2 (unlabeled, inside the box): {int(unknown.sum())} voxels, "
      f"{int((unknown & gt).sum())} of them lesion")
print(f"label 0 (background, outside the box): {int((mask == 0).sum())} voxels")
