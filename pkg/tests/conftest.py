import numpy as np
import pytest

from humattn import numcore as nc


def gradcheck(build_loss, params, h=1e-5, max_coords=None, rng=None):
    """Max relative error between autodiff and central differences.

    ``build_loss`` returns a fresh scalar Tensor each call; ``params`` are leaf
    tensors whose ``.data`` is perturbed in place.
    """
    for p in params:
        p.grad = None
    loss = build_loss()
    nc.backward(loss)
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, g in zip(params, analytic):
        idx = list(np.ndindex(*p.shape))
        if max_coords is not None and len(idx) > max_coords:
            rng = rng or np.random.default_rng(0)
            pick = rng.choice(len(idx), size=max_coords, replace=False)
            idx = [idx[i] for i in pick]

        def f():
            with nc.no_grad():
                return float(build_loss().data)

        num = nc.numerical_grad(f, p.data, h=h, indices=idx)
        for i, v in num.items():
            a = float(g[i])
            err = abs(a - v) / max(abs(a), abs(v), 1e-6)
            worst = max(worst, err)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 10):
        if n in mod.RESULTS:
            ok, text = mod.RESULTS[n]
            terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {text}")
        else:
            terminalreporter.write_line(f"criterion {n}: NOT RUN")
