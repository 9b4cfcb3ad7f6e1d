import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dwlab.matrices import (
    NotPositiveDefiniteError,
    PsdMatrix,
    SpdMatrix,
    jacobi_eigh,
    log_det,
    loewner_geq,
    op_norm,
    spd_sqrt,
)

from conftest import random_spd_cells


def test_sqrt_identity_and_diagonal():
    assert np.allclose(spd_sqrt(np.eye(2)).entries, np.eye(2))
    assert np.allclose(spd_sqrt(np.diag([4.0, 9.0])).entries, np.diag([2.0, 3.0]))


def test_sqrt_spectral_hand_case():
    # Eigenpairs of [[2,1],[1,2]]: 1 on (1,-1)/sqrt2 and 3 on (1,1)/sqrt2,
    # so the root is [[(1+sqrt3)/2, (sqrt3-1)/2], [...]].
    s = spd_sqrt([[2.0, 1.0], [1.0, 2.0]])
    r3 = math.sqrt(3.0)
    expected = np.array([[(1 + r3) / 2, (r3 - 1) / 2], [(r3 - 1) / 2, (1 + r3) / 2]])
    assert np.allclose(s.entries, expected, atol=1e-12)
    assert np.allclose(s.entries @ s.entries, [[2, 1], [1, 2]], atol=1e-12)


def test_op_norm_examples():
    assert op_norm(np.zeros((2, 3))) == 0.0
    assert abs(op_norm(np.diag([1.0, 3.0])) - 3.0) < 1e-12
    assert abs(op_norm(np.array([[0.0, 1.0], [0.0, 0.0]])) - 1.0) < 1e-12


def test_log_det_examples():
    assert abs(log_det(np.eye(4))) < 1e-14
    assert abs(log_det(np.diag([1.0, 4.0])) - math.log(4.0)) < 1e-12
    assert abs(log_det([[2.0, 1.0], [1.0, 2.0]]) - math.log(3.0)) < 1e-12
    assert abs(math.exp(log_det(np.diag([1.0, 4.0]))) - 4.0) < 1e-10 * 4.0


def test_loewner_examples():
    assert loewner_geq(np.eye(2), np.eye(2), 0.0)
    assert not loewner_geq(np.diag([2.0, 2.0]), np.diag([1.0, 3.0]), 0.0)
    assert loewner_geq(np.diag([1.0, 3.0]), np.diag([1.0, 3.0]), 0.0)
    with pytest.raises(ValueError, match="mismatch"):
        loewner_geq(np.eye(2), np.eye(3))


def test_construction_error_names_eigenvalue():
    with pytest.raises(NotPositiveDefiniteError, match="eigenvalue"):
        SpdMatrix([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(NotPositiveDefiniteError):
        SpdMatrix(np.zeros((2, 2)))
    # PSD variant tolerates a zero eigenvalue.
    assert PsdMatrix(np.zeros((2, 2))).entries.shape == (2, 2)
    assert PsdMatrix([[1.0, 1.0], [1.0, 1.0]]).dim == 2


def test_immutable():
    a = SpdMatrix(np.eye(2))
    with pytest.raises(AttributeError):
        a.dim = 3
    with pytest.raises(ValueError):
        a.entries[0, 0] = 5.0


def test_jacobi_against_numpy(rng):
    for _ in range(80):
        n = int(rng.integers(1, 7))
        g = rng.standard_normal((n, n)) * 10.0 ** rng.uniform(-3, 3)
        g = (g + g.T) / 2.0
        w, v = jacobi_eigh(g)
        scale = max(np.max(np.abs(w)), 1e-300)
        assert np.allclose(w, np.linalg.eigvalsh(g), atol=1e-12 * scale)
        assert np.allclose(v @ np.diag(w) @ v.T, g, atol=1e-12 * scale)
        assert np.allclose(v.T @ v, np.eye(n), atol=1e-12)


def test_sqrt_squares_back(rng):
    mats = random_spd_cells(rng, 60, 3, spread=1.0)
    for m in mats:
        s = spd_sqrt(m)
        scale = op_norm(m)
        assert np.max(np.abs(s.entries @ s.entries - m)) <= 1e-10 * scale


def test_expanding_matrix_norm_det_sandwich(rng):
    # For symmetric A with all eigenvalues >= 1:
    # 1 <= |A| <= det(A) = exp(log_det) <= |A|^N.
    for _ in range(60):
        n = int(rng.integers(1, 5))
        q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        eigs = 1.0 + rng.uniform(0.0, 3.0, size=n)
        a = (q * eigs) @ q.T
        nrm = op_norm(a)
        det = math.exp(log_det(a))
        assert 1.0 - 1e-12 <= nrm <= det * (1 + 1e-12)
        assert det <= nrm**n * (1 + 1e-12)


def test_op_norm_submultiplicative_transpose(rng):
    for _ in range(60):
        m, k, n = rng.integers(1, 5, size=3)
        a = rng.standard_normal((int(m), int(k)))
        b = rng.standard_normal((int(k), int(n)))
        assert op_norm(a @ b) <= op_norm(a) * op_norm(b) * (1 + 1e-12)
        assert abs(op_norm(a) - op_norm(a.T)) <= 1e-12 * max(op_norm(a), 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=1, max_value=4), st.integers(min_value=0, max_value=2**31 - 1))
def test_sqrt_roundtrip_property(dim, seed):
    rng = np.random.default_rng(seed)
    m = random_spd_cells(rng, 1, dim, spread=0.8)[0]
    s = spd_sqrt(m)
    assert np.max(np.abs(s.entries @ s.entries - m)) <= 1e-10 * max(op_norm(m), 1e-10)
