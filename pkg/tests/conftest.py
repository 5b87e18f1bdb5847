import numpy as np
import pytest

from crossaug import kernels
from crossaug.core import Dataset
from crossaug.synthgen import BenchmarkConfig


def make_dataset(seed=0, n=12, C=3, F=4, T=3, M=2, domains=None, first_id=0, min_ingredients=0):
    g = np.random.default_rng(seed)
    n_ing = g.integers(min_ingredients, M + 1, n)
    ing = g.standard_normal((n, M, T)) * (np.arange(M)[None, :, None] < n_ing[:, None, None])
    return Dataset(
        ids=np.arange(first_id, first_id + n, dtype=np.uint64),
        labels=np.arange(n) % C,
        domains=(np.arange(n) % 2 if domains is None else np.full(n, domains)).astype(np.uint8),
        image=g.standard_normal((n, F)),
        title=g.standard_normal((n, T)),
        ingredients=ing,
        n_ingredients=n_ing,
        num_classes=C,
    )


@pytest.fixture
def tiny():
    return make_dataset()


@pytest.fixture
def small_bench_config():
    # a quick benchmark for integration tests
    return BenchmarkConfig(num_classes=6, clusters=2, feature_dim=8, text_dim=8, n_max=40,
                           imbalance_ratio=10, test_per_class=5)


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    previous = kernels.get_backend()
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(previous)


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    if not test_acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(test_acceptance.RESULTS):
        terminalreporter.write_line(test_acceptance.format_line(n, *test_acceptance.RESULTS[n]))
