import timeit

import numpy as np

from src.geometry import frame_covering, raster_iou, rasterize
from src.representations import representation_iou, to_polygon
from src.schemas import OrientedBox


def setup_box_pairs(count=1000):
    rng = np.random.default_rng(11)

    def draw():
        return OrientedBox(*rng.uniform(8, 12, 2), *rng.uniform(2, 6, 2), rng.uniform(-90, 90))

    return [(draw(), draw()) for _ in range(count)]


def test_exact_and_raster_box_iou_agree_perf():
    pairs = setup_box_pairs()
    worst = 0.0

    def run():
        nonlocal worst
        for a, b in pairs:
            poly_a, poly_b = to_polygon(a), to_polygon(b)
            frame = frame_covering([poly_a.bounds(), poly_b.bounds()], 512)
            raster = raster_iou(rasterize(poly_a, frame), rasterize(poly_b, frame))
            worst = max(worst, abs(representation_iou(a, b) - raster))

    t = timeit.timeit(run, number=1)
    print(f"exact vs raster box IoU: {t:.4f} seconds for {len(pairs)} pairs (worst gap {worst:.4f})")
    assert worst <= 0.01
    assert t < 120.0
