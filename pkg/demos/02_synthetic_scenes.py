"""Generate synthetic multi-frame scenes and render frames, ground-truth flow,
and occlusion masks as PNGs under demos/out/.

Run:  python demos/02_synthetic_scenes.py
"""

from pathlib import Path

import numpy as np

from groupflow.data import gen_moving_shapes
from groupflow.flow_io import write_image
from groupflow.visualize import flow_to_color

out = Path(__file__).parent / "out" / "scenes"
out.mkdir(parents=True, exist_ok=True)

sample = next(gen_moving_shapes(seed=7, count=1, size=96, frames_per_sample=3, max_disp=10))

for t, frame in enumerate(sample.frames):
    write_image(out / f"frame_{t}.png", frame)

for k, (flow, occ) in enumerate(zip(sample.gt_flows, sample.occ_masks)):
    write_image(out / f"flow_{k}.png", flow_to_color(flow))
    write_image(out / f"occ_{k}.png", np.stack([occ.astype(np.float32)] * 3, axis=-1))
    speeds = np.unique(np.hypot(flow[..., 0], flow[..., 1]))
    print(f"pair ({k},{k+1}): speeds {np.round(speeds, 2)} px, "
          f"occluded fraction {occ.mean():.1%}")

print(f"\nwrote renderings to {out}")
print("flow colors: hue = direction, saturation = speed, white = static")
print("occlusion masks mark pixels with no counterpart in the next frame:")
print("covered by another object, or carried out of the image")
