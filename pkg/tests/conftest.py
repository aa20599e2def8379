import numpy as np
import pytest


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


SMALL_OVERRIDES = (
    "phantom.matrix_size=32", "phantom.n_coils=4", "phantom.heart_center=[1, -1.5]",
    "phantom.heart_radius_range=[2.5, 4.5]", "phantom.peripheral_center=[-8, 11]",
    "phantom.peripheral_radius=1.5", "phantom.background_axes=[9.5, 11.5]",
    "phantom.resp_depth=1.5", "phantom.duration=8.0", "T=4", "R=2",
    "compression.n_virtual=3", "recon.K=2", "recon.n_iter=5", "noise_samples=2000",
)


@pytest.fixture(scope="session")
def small_config():
    """Pipeline settings that finish end to end in a few seconds."""
    from radcine.config import load_config
    return load_config(None, SMALL_OVERRIDES).validate()


@pytest.fixture(scope="session")
def small_run(tmp_path_factory, small_config):
    from radcine.pipeline import run_pipeline
    run_dir = tmp_path_factory.mktemp("run")
    run_pipeline(small_config, run_dir)
    return run_dir


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
