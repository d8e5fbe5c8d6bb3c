import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rfkernels.trees import Dataset, GrowConfig

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

GROWERS = {
    "uniform": GrowConfig("uniform", max_depth=5),
    "extra_trees": GrowConfig("extra_trees", min_samples_leaf=2),
    "softmax": GrowConfig("softmax", max_depth=6, n_candidates=4, beta=5.0),
    "breiman_greedy": GrowConfig("breiman_greedy", max_features=3, bootstrap=True, min_samples_leaf=2),
}

# filled by the acceptance tests, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def random_dataset(n=200, p=5, seed=0) -> Dataset:
    rng = np.random.default_rng(seed)
    X = rng.random((n, p))
    y = np.sin(4 * X[:, 0]) + X[:, 1] ** 2 + 0.3 * rng.standard_normal(n)
    return Dataset(X, y)


@pytest.fixture
def small_data():
    return random_dataset(80, 3, seed=7)


@pytest.fixture(params=sorted(GROWERS))
def grower(request):
    return GROWERS[request.param]


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
