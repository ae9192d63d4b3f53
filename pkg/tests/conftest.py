import numpy as np
import pytest


def solid(w, h, rgba):
    img = np.zeros((h, w, 4), dtype=np.uint8)
    img[...] = rgba
    return img


def random_sprite_sequence(rng, n=8, w=64, h=48, max_boxes=3):
    """Frames with a few random opaque boxes each (never empty)."""
    frames = []
    for _ in range(n):
        img = np.zeros((h, w, 4), dtype=np.uint8)
        for _ in range(rng.integers(1, max_boxes + 1)):
            x0, y0 = rng.integers(0, w - 1), rng.integers(0, h - 1)
            x1, y1 = rng.integers(x0 + 1, w + 1), rng.integers(y0 + 1, h + 1)
            img[y0:y1, x0:x1, :3] = rng.integers(0, 256, 3)
            img[y0:y1, x0:x1, 3] = rng.integers(1, 256)
        frames.append(img)
    return frames


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
