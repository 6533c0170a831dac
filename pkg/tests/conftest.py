import numpy as np
import pytest

from ggiw_pmbm.ggiw import GGIWParams, SensorModel


def random_spd(rng, d=2, scale=1.0):
    A = rng.normal(size=(d, d))
    return scale * (A @ A.T + d * np.eye(d))


def random_ggiw(rng, nx=4, d=2, spread=5.0) -> GGIWParams:
    return GGIWParams(
        alpha=float(rng.uniform(5, 50)),
        beta=float(rng.uniform(0.5, 5)),
        m=rng.normal(scale=spread, size=nx),
        P=random_spd(rng, nx, 0.3),
        v=float(rng.uniform(2 * d + 4, 30)),
        V=random_spd(rng, d, 3.0),
    )


def simple_ggiw(x=0.0, y=0.0, alpha=20.0, beta=2.0, v=12.0, ext=1.0, pos_var=1.0) -> GGIWParams:
    d = 2
    return GGIWParams(
        alpha=alpha,
        beta=beta,
        m=np.array([x, y, 0.0, 0.0]),
        P=np.diag([pos_var, pos_var, 0.5, 0.5]),
        v=v,
        V=ext * (v - 2 * d - 2) * np.eye(2),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def sensor():
    return SensorModel(clutter_rate=5.0, area=400.0, p_D=0.9, p_S=0.99)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


def record(name: str, ok: bool, detail: str) -> None:
    line = f"{name}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
