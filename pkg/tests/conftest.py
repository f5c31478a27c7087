import numpy as np
import pytest

from ndif import autodiff as ad
from ndif.data import Normalizer
from ndif.unet import UNetConfig


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar f() with respect to array x (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max-norm relative error between two gradient arrays."""
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / scale)


def check_op_gradients(build, inputs, seed=0, h=1e-5):
    """Compare backward() against central differences for every input.

    ``build`` maps Tensors to an output Tensor; the scalar checked is
    ``sum(out * R)`` for a fixed random R so every output element contributes.
    Returns the worst relative error.
    """
    rng = np.random.default_rng(seed)
    tensors = [ad.Tensor(x, requires_grad=True) for x in inputs]
    out = build(*tensors)
    proj = rng.standard_normal(out.shape)
    loss = (out * ad.Tensor(proj)).sum()
    ad.backward(loss)
    worst = 0.0
    for t in tensors:

        def f():
            with ad.no_grad():
                return float((build(*tensors).data * proj).sum())

        num = numeric_grad(f, t.data, h)
        worst = max(worst, rel_error(t.grad, num))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_unet_config():
    return UNetConfig(base_channels=8, channel_mults=(1, 2), res_blocks_per_level=1, groups=4, time_embed_dim=8, grid_length=16)


@pytest.fixture
def small_unet_config():
    return UNetConfig(base_channels=8, channel_mults=(1, 2, 4), res_blocks_per_level=1, groups=4, time_embed_dim=16, grid_length=32)


@pytest.fixture
def unit_normalizer():
    return Normalizer(2.0, 4.0)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"AC{number:<2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s[2:4])):
            terminalreporter.write_line(line)
