import numpy as np
import pytest

from dwlab.grid import Grid, WeightField

# one line per acceptance criterion, echoed after the run summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_spd_cells(rng, count, dim, spread=0.5):
    """Stack of SPD matrices exp(G) with G symmetric Gaussian."""
    g = rng.standard_normal((count, dim, dim)) * spread
    g = (g + g.transpose(0, 2, 1)) / 2.0
    w, v = np.linalg.eigh(g)
    return np.einsum("cij,cj,ckj->cik", v, np.exp(w), v)


def random_weight_field(rng, n=1, N=2, L=3, spread=0.5, mu_spread=0.0):
    """Weight field built directly (independently of the generator module)."""
    side = 2**L
    cells = side**n
    values = random_spd_cells(rng, cells, N, spread).reshape((side,) * n + (N, N))
    if mu_spread > 0.0:
        mu = np.exp(rng.standard_normal((side,) * n) * mu_spread)
    else:
        mu = None
    return WeightField(Grid(n, L, mu), values)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
