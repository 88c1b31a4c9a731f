"""Walkthrough of the correlation machinery: all-pairs volume, mean-pooled
pyramid, and radius-bounded lookups around a flow target.

Run:  python demos/01_correlation_pyramid.py
"""

import torch

from groupflow.correlation import build_pyramid, build_volume, lookup

torch.manual_seed(0)

# two tiny feature maps standing in for consecutive frames at 1/8 resolution
feat1 = torch.randn(1, 16, 8, 8)
feat2 = torch.randn(1, 16, 8, 8)

vol = build_volume(feat1, feat2)
print(f"volume shape {tuple(vol.shape)}: one dot product per (source, target) pair")
print(f"  value at source (2,3) / target (5,1): {vol[0, 2, 3, 5, 1]:.4f}")
print(f"  same number the long way:             "
      f"{torch.dot(feat1[0, :, 2, 3], feat2[0, :, 5, 1]):.4f}")

pyr = build_pyramid(vol, num_levels=4)
print(f"\npyramid levels (target dims shrink 2x per level):")
for lvl, level in enumerate(pyr.levels):
    print(f"  level {lvl}: target {tuple(level.shape[-2:])}")

# level 1 entries are 2x2 target-window means of level 0
window_mean = vol[0, 2, 3, 4:6, 0:2].mean()
print(f"\nlevel-1 entry (2,3)->(2,0) = {pyr.levels[1].reshape(1, 8, 8, 4, 4)[0, 2, 3, 2, 0]:.4f}"
      f"  (window mean {window_mean:.4f})")

# lookups sample a (2r+1)^2 grid around position + flow at every level
flow = torch.zeros(1, 2, 8, 8)
flow[0, 0] = 1.5   # everyone looks 1.5 px to the right
feat = lookup(pyr, flow, radius=3)
print(f"\nlookup with r=3 over 4 levels -> {feat.shape[1]} channels "
      f"(= 4 levels x 7x7 window)")
print(f"  channel block per level: {(2 * 3 + 1) ** 2}")
