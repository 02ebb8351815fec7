import timeit

from src.dataset import SceneSpec, generate_corpus
from src.evaluation import upper_bound_study
from src.fisheye import CameraModel
from src.representation_register import table_specs


def setup_masks(frames):
    # Default object mix: vehicles (some L-shaped) and pedestrians
    corpus = generate_corpus(SceneSpec(), CameraModel(), frames=frames, workers=1)
    return corpus.masks()


def test_upper_bound_perf():
    masks = setup_masks(4)
    specs = table_specs()
    t = timeit.timeit(lambda: upper_bound_study(masks, specs), number=3)
    print(f"upper_bound_study: {t:.4f} seconds for 3 runs over {len(masks)} instances")
    assert t < 60.0


def test_upper_bound_table_trend():
    masks = setup_masks(120)
    assert len(masks) >= 500
    specs = table_specs()
    table = None

    def run():
        nonlocal table
        table = upper_bound_study(masks, specs, workers=1)

    t = timeit.timeit(run, number=1)
    print(f"upper_bound_study: {t:.4f} seconds single-threaded over {len(masks)} instances")
    print(", ".join(table.header()))
    print(", ".join(table.row()))
    means = [table.mean_iou[spec.column] for spec in specs]
    assert all(low < high for low, high in zip(means, means[1:]))
    assert t < 120.0
