import numpy as np
import pytest

from vidprecode import tensor as T
from vidprecode.tensor import Tensor
from vidprecode.video_io import Frame


@pytest.fixture
def f64():
    with T.precision("float64"):
        yield


def natural_frame(width: int, height: int, seed: int, max_luma: int = 255) -> Frame:
    """Textured test frame: gradients, sinusoids and smoothed noise."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width]
    base = 110 + 60 * np.sin(xx / 6.5) * np.cos(yy / 9.0) + 40 * (xx + yy) / (width + height)
    tex = rng.normal(0, 14, (height, width))
    sm = np.cumsum(np.cumsum(rng.normal(0, 1, (height, width)), 0), 1)
    sm = (sm - sm.mean()) / (np.abs(sm).max() + 1e-9) * 25
    y = np.clip(base + tex + sm, 0, max_luma).astype(np.uint8)
    ch, cw = (height + 1) // 2, (width + 1) // 2
    u = np.clip(120 + rng.normal(0, 6, (ch, cw)), 0, 255).astype(np.uint8)
    v = np.clip(132 + rng.normal(0, 6, (ch, cw)), 0, 255).astype(np.uint8)
    return Frame(y, u, v)


def ramp_texture_crops(n: int, size: int, seed: int, amp: float = 0.05) -> list:
    """Crops whose mock-codec degradation is dominated by predictable
    truncation: ramp base plus firmly sub-threshold 2-D product textures."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
        gdir = rng.uniform(0.6, 1.4, 2)
        base = 0.25 + 0.5 * (gdir[0] * xx + gdir[1] * yy) / (gdir[0] + gdir[1])
        tex = np.zeros((size, size))
        for _ in range(2):
            f1 = rng.uniform(size / 4.0, size / 2.5)
            f2 = rng.uniform(size / 4.0, size / 2.5)
            tex += (amp / 2 ** 0.5) * np.sin(2 * np.pi * f1 * xx + rng.uniform(0, 6)) * \
                np.cos(2 * np.pi * f2 * yy + rng.uniform(0, 6))
        luma = np.clip(base + tex, 0.03, 0.97)
        img = np.stack([
            luma,
            np.clip(0.5 + 0.15 * (luma - 0.5), 0.03, 0.97),
            np.clip(0.5 - 0.1 * (luma - 0.5), 0.03, 0.97),
        ])
        out.append(Tensor(img[None]))
    return out
