import numpy as np
import pytest

from asgan.ndcore import Tape, backward


def gradcheck(build_loss, params, h=1e-5):
    """Worst relative error between tape gradients and central differences.

    build_loss() must rebuild the scalar loss from scratch; it runs once
    under a fresh tape for the analytic pass and twice per parameter entry
    (outside any tape) for the numeric pass.
    """
    tape = Tape()
    with tape:
        loss = build_loss()
    backward(loss, tape)
    analytic = [None if p.grad is None else p.grad.copy() for p in params]
    tape.clear()

    worst = 0.0
    for p, g in zip(params, analytic):
        if g is None:
            raise AssertionError("parameter received no gradient")
        num = np.zeros_like(p.data)
        it = np.nditer(p.data, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = p.data[i]
            p.data[i] = orig + h
            fp = build_loss().item()
            p.data[i] = orig - h
            fm = build_loss().item()
            p.data[i] = orig
            num[i] = (fp - fm) / (2.0 * h)
        denom = max(np.linalg.norm(num), np.linalg.norm(g), 1e-12)
        worst = max(worst, float(np.linalg.norm(g - num) / denom))
    return worst


@pytest.fixture
def rng_seed():
    return 12345
