import numpy as np
import pytest

from beamgat.autodiff import Tape, Tensor


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x.copy())
        flat[i] = orig - h
        down = f(x.copy())
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def max_rel_error(a, b, floor: float = 1e-6) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def reverse_grads(build, *arrays):
    """Reverse-mode gradients of ``build(*tensors)`` w.r.t. each array."""
    with Tape() as tape:
        ts = [tape.watch(Tensor(a)) for a in arrays]
        loss = build(*ts)
        grads = tape.backward(loss)
    return [grads[t.node_id].values for t in ts]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance lines collected during the run, echoed once at the end
ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
