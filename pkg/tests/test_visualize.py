import colorsys

import numpy as np
import pytest

from groupflow.visualize import flow_to_color


def hue_of(rgb):
    return colorsys.rgb_to_hsv(*(rgb / 255.0))[0]


class TestFlowToColor:
    def test_zero_flow_is_white(self):
        img = flow_to_color(np.zeros((6, 6, 2)))
        assert img.dtype == np.uint8
        assert np.all(img == 255)

    def test_max_magnitude_fully_saturated(self):
        flow = np.zeros((1, 1, 2))
        flow[..., 0] = 5.0
        img = flow_to_color(flow, max_magnitude=5.0)
        r, g, b = img[0, 0].astype(float)
        assert colorsys.rgb_to_hsv(r / 255, g / 255, b / 255)[1] == pytest.approx(1.0)

    def test_opposite_directions_are_antipodal_hues(self):
        rng = np.random.default_rng(0)
        for _ in range(8):
            v = rng.uniform(-4, 4, size=2)
            if np.hypot(*v) < 0.5:
                continue
            a = flow_to_color(np.full((1, 1, 2), v), max_magnitude=8.0)[0, 0]
            b = flow_to_color(np.full((1, 1, 2), -v), max_magnitude=8.0)[0, 0]
            diff = abs(hue_of(a.astype(float)) - hue_of(b.astype(float)))
            assert min(diff, 1 - diff) == pytest.approx(0.5, abs=0.02)

    def test_magnitude_normalization(self):
        flow = np.zeros((2, 1, 2))
        flow[0, 0, 0] = 1.0
        flow[1, 0, 0] = 2.0
        img = flow_to_color(flow)  # auto max = 2
        # the weaker vector must be the less saturated (closer to white)
        assert img[0, 0].min() > img[1, 0].min()

    def test_rejects_non_finite(self):
        flow = np.zeros((2, 2, 2))
        flow[0, 0, 0] = np.inf
        with pytest.raises(ValueError):
            flow_to_color(flow)

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            flow_to_color(np.zeros((2, 2, 3)))
