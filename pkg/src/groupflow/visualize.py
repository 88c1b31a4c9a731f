"""Flow field rendering: hue encodes direction, saturation encodes magnitude.

Zero flow renders white; opposite directions land on antipodal hues.
"""

import numpy as np


def _hsv_to_rgb(h, s, v):
    """Vectorized HSV -> RGB, all arrays in [0, 1]."""
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    table = np.stack([
        np.stack([v, t, p], axis=-1),
        np.stack([q, v, p], axis=-1),
        np.stack([p, v, t], axis=-1),
        np.stack([p, q, v], axis=-1),
        np.stack([t, p, v], axis=-1),
        np.stack([v, p, q], axis=-1),
    ])
    return np.take_along_axis(table, i[None, ..., None], axis=0)[0]


def flow_to_color(flow, max_magnitude=None) -> np.ndarray:
    """(H, W, 2) flow -> uint8 RGB image.

    max_magnitude normalizes saturation; by default it is the field's own
    maximum (a tiny floor guards the all-zero case).
    """
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[-1] != 2:
        raise ValueError(f"expected (H, W, 2), got {flow.shape}")
    if not np.isfinite(flow).all():
        raise ValueError("flow contains non-finite values")
    u, v = flow[..., 0], flow[..., 1]
    mag = np.hypot(u, v)
    if max_magnitude is None:
        max_magnitude = max(float(mag.max()), 1e-8)
    hue = (np.arctan2(v, u) / (2 * np.pi)) % 1.0
    sat = np.clip(mag / max_magnitude, 0.0, 1.0)
    rgb = _hsv_to_rgb(hue, sat, np.ones_like(sat))
    return np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)
