import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def example1_dataset():
    from pppd.core import LimitState
    from pppd.models import HypotheticalModel
    from pppd.sampling import direct_mc

    return direct_mc(HypotheticalModel(), LimitState.full_space(), 2000, seed=1)


@pytest.fixture(scope="session")
def example1_embeddings(example1_dataset):
    from pppd.manifold import DiffusionConfig, multiscale_embed

    cfg = DiffusionConfig(epsilon=10.0, dt=0.01, n_t=4)
    return multiscale_embed(example1_dataset.y, cfg, [1, 50])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, title, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {title}")
        terminalreporter.write_line(f"              {detail}")
