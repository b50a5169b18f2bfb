import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from uada.augment import ImageBatch

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_batch(rng, n=4, c=1, h=16, w=16, num_classes=3) -> ImageBatch:
    data = rng.random((n, c, h, w)).astype(np.float32)
    return ImageBatch(data, rng.integers(0, num_classes, size=n))


@pytest.fixture
def batch(rng):
    return random_batch(rng)


# ---------------------------------------------------------------------------
# acceptance summary: one line per criterion, repeated at the end of the run
# ---------------------------------------------------------------------------

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report_criterion(capsys):
    def report(number: int, title: str, passed: bool, detail: str, seconds: float, bound: float):
        within = seconds < bound
        ok = passed and within
        line = (f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}: {detail} "
                f"(runtime {seconds:.1f} s, bound {bound:g} s{'' if within else ', EXCEEDED'})")
        _ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
