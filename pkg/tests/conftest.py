import numpy as np
import pytest

from xray_ddpm.core import make_rng
from xray_ddpm.denoiser import PRESETS
from xray_ddpm.schedule import linear_schedule
from xray_ddpm.synthetic import shapes_corpus, write_shapes

# smoke-scale schedule: T=50 with the 1000-step betas scaled by 1000/T
SMOKE_T, SMOKE_BETA_START, SMOKE_BETA_END = 50, 2e-3, 0.4

_acceptance_lines: list[str] = []


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def toy_config():
    return PRESETS["toy"]


@pytest.fixture
def smoke_schedule():
    return linear_schedule(SMOKE_T, SMOKE_BETA_START, SMOKE_BETA_END)


@pytest.fixture(scope="session")
def shapes8():
    return shapes_corpus(16, 8, seed=0)


@pytest.fixture
def shapes_dir(tmp_path):
    d = tmp_path / "shapes"
    write_shapes(d, 16, 8, seed=0)
    return d


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(name: str, ok: bool, detail: str = ""):
        _acceptance_lines.append(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))
        assert ok, f"{name}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


def random_image(rng, shape, lo=0.0, hi=255.0):
    return rng.uniform(lo, hi, size=shape)


np.set_printoptions(precision=6)
