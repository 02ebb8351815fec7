import timeit

from src.losses import gradient_audit


def test_gradient_audit_perf():
    result = None

    def run():
        nonlocal result
        result = gradient_audit(seed=42, trials=100)

    t = timeit.timeit(run, number=1)
    print(f"gradient_audit: {t:.4f} seconds for 100 trials ({result.checked} partials)")
    assert result.passed()
    assert t < 30.0
