import numpy as np
import pytest

from lightspace import sh


def smooth_map(rng: np.random.Generator, width: int = 128, height: int = 64) -> np.ndarray:
    """Band-limited random panorama: positive SH expansion, exactly smooth."""
    coeffs = rng.normal(0.0, 0.3, size=(3, sh.N_COEFFS))
    coeffs[:, 0] = rng.uniform(2.0, 4.0, size=3)  # DC dominates, keeps values positive
    data = sh.render_sh(coeffs, width, height)
    return np.maximum(data, 0.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        status = "PASS" if report.passed else "FAIL"
        print(f"\n[acceptance] {name}: {status}", flush=True)
