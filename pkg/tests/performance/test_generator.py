import timeit

from src.dataset import SceneSpec, generate_scene
from src.fisheye import CameraModel, WarpDirection, warp_map


def test_generate_scene_perf():
    spec = SceneSpec(seed=7)
    cam = CameraModel()
    warp_map.cache_clear()
    t = timeit.timeit(lambda: warp_map(cam, spec.plane, WarpDirection.DISTORT), number=1)
    print(f"warp_map: {t:.4f} seconds for the first (uncached) build")
    assert t < 30.0
    t = timeit.timeit(lambda: generate_scene(spec, cam, 0), number=10)
    print(f"generate_scene: {t:.4f} seconds for 10 frames")
    assert t < 30.0
