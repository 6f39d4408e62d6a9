import os

# keep BLAS single-threaded so timings reflect one core
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from mvlift.studio import SceneSpec, default_basis, generate  # noqa: E402
from mvlift.types import CameraRig  # noqa: E402


@pytest.fixture(scope="session")
def basis():
    return default_basis()


@pytest.fixture(scope="session")
def rig():
    return CameraRig.studio()


@pytest.fixture(scope="session")
def clean_frames(basis):
    return generate(SceneSpec(basis=basis, seed=11), 6)


@pytest.fixture(scope="session")
def noisy_frames(basis):
    spec = SceneSpec(basis=basis, noise_px=3.0, outlier_rate=0.05, seed=12)
    return generate(spec, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion; returns the verdict."""
    def record(number, name, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
        request.config._acceptance_lines.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
