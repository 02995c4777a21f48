import numpy as np
import pytest

from fftrust import autodiff as ad


def numeric_grad(fn, arr, eps=1e-5):
    """Central differences of the scalar ``fn()`` with respect to ``arr`` (mutated in place)."""
    flat = arr.reshape(-1)
    out = np.zeros(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = float(fn())
        flat[i] = orig - eps
        down = float(fn())
        flat[i] = orig
        out[i] = (up - down) / (2 * eps)
    return out.reshape(arr.shape)


def grad_rel_err(loss_fn, tensors, eps=1e-5):
    """Max ``|analytic - numeric| / max(1, |analytic|)`` over every entry of ``tensors``."""
    for t in tensors:
        t.zero_grad()
    ad.backward(loss_fn())
    worst = 0.0
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        numeric = numeric_grad(lambda: loss_fn().item(), t.data, eps)
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic)))))
    for t in tensors:
        t.zero_grad()
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def record_criterion(name, passed, detail):
    ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    print(ACCEPTANCE_LINES[-1])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
