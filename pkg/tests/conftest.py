import numpy as np
import pytest

from uniphynet import nn


@pytest.fixture
def f64():
    with nn.precision("f64"):
        yield


def leaf(arr, grad=True):
    return nn.Tensor(np.asarray(arr, dtype=nn.get_dtype()), requires_grad=grad)


def probe_loss(fn, out_shape, rng):
    """Scalar loss <fn(), W> with W drawn once, so repeated calls are comparable."""
    w = rng.standard_normal(out_shape)

    def loss():
        return (fn() * w).sum()

    return loss


ACCEPTANCE = {}  # criterion number -> (status, detail), filled by test_acceptance


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {detail}")
