import numpy as np
import pytest
import sympy as sp

X, Y, Z = sp.symbols("x y z", real=True)
COORDS = (X, Y, Z)
RHO = (1 - X**2 - Y**2 - Z**2) / 2


def ball_points(seed: int, n: int = 20, r_min: float = 0.2, r_max: float = 0.85) -> np.ndarray:
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * rng.uniform(r_min, r_max, size=(n, 1))


def sympy_eval(expr, points: np.ndarray) -> np.ndarray:
    fn = sp.lambdify(COORDS, expr, "numpy")
    out = np.broadcast_to(np.asarray(fn(points[:, 0], points[:, 1], points[:, 2]), dtype=float), (len(points),))
    return np.array(out)


@pytest.fixture
def points():
    return ball_points(0)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
