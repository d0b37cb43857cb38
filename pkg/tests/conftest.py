import pytest

from polysbf.expansion import match_gammas
from polysbf.sphere_geom import normalize
from polysbf.zonal_kernels import PolyharmonicKernel


@pytest.fixture(scope="session")
def g2():
    """Polyharmonic kernel with m = 2 on S^2, roots (-1, -3)."""
    return PolyharmonicKernel(2, (-1, -3), 2)


@pytest.fixture(scope="session")
def g2_eval(g2):
    return match_gammas(g2, 5, fit=False).evaluator()


def random_unit(rng, n, dim=3):
    return normalize(rng.standard_normal((n, dim)))


_CRITERIA: list[str] = []


def record_criterion(line: str) -> None:
    print(line)
    _CRITERIA.append(line)


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split("criterion ")[1].split()[0])):
            terminalreporter.write_line(line)
