import numpy as np
import pytest

from modbalance.model import init_params


def small_model(seed=0, mode="concatenation", dims_a=(8, 6, 4), dims_v=(8, 6, 4), n_classes=3):
    rng = np.random.default_rng(seed)
    params = init_params(dims_a, dims_v, n_classes, mode, rng)
    # larger head/bias so gradients are not tiny
    params.head.w_a[...] = rng.standard_normal(params.head.w_a.shape)
    params.head.w_v[...] = rng.standard_normal(params.head.w_v.shape)
    params.head.bias[...] = rng.standard_normal(n_classes)
    return params


def small_batch(seed=0, n=4, d_a=8, d_v=8, n_classes=3):
    rng = np.random.default_rng(seed + 1000)
    return rng.standard_normal((n, d_a)), rng.standard_normal((n, d_v)), rng.integers(0, n_classes, n)


@pytest.fixture
def model_and_batch():
    return small_model(0), small_batch(0)


ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
