"""Scalar Haar analysis on [0,1) with Lebesgue measure.

This is the one-dimensional unweighted model: orthonormal Haar functions
h_Q = |Q|^{-1/2} (1_left - 1_right), block averages E_Q, and the paraproduct
built from (detail of b) times (average of f).  All sums are finite, so the
product identity and the Parseval equalities hold to rounding error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "HaarSystem",
    "haar_decompose",
    "reconstruct",
    "subtree_parseval_residual",
    "product_identity_residual",
    "ParaproductResult",
    "paraproduct_plus",
    "dyadic_bmo_sq",
]


@dataclass
class HaarSystem:
    """Coefficients (f, h_Q) and averages E_Q f per level for one signal.

    ``coeffs[k]`` and ``means[k]`` are indexed by the 2**k intervals of level
    ``k`` for k = 0 .. L-1; ``coarse_mean`` is the average over [0,1).
    """

    depth: int
    coarse_mean: float
    means: list
    coeffs: list


def _block_means(values):
    """means[k][j] = average of the signal over interval j of level k."""
    L = int(math.log2(values.size))
    if 2**L != values.size:
        raise ValueError("signal length must be a power of two")
    levels = [values.astype(float)]
    for _ in range(L):
        prev = levels[-1]
        levels.append((prev[0::2] + prev[1::2]) / 2.0)
    return levels[::-1], L  # levels[k] has 2**k entries


def haar_decompose(values):
    values = np.asarray(values, dtype=float)
    means, L = _block_means(values)
    coeffs = []
    for k in range(L):
        left = means[k + 1][0::2]
        right = means[k + 1][1::2]
        # (f, h_Q) with h_Q = 2^{k/2} on the left half, -2^{k/2} on the right.
        coeffs.append(2.0 ** (-k / 2.0 - 1.0) * (left - right))
    return HaarSystem(depth=L, coarse_mean=float(means[0][0]), means=means[:L], coeffs=coeffs)


def reconstruct(system):
    out = np.array([system.coarse_mean])
    for k in range(system.depth):
        step = system.coeffs[k] * 2.0 ** (k / 2.0)
        nxt = np.empty(out.size * 2)
        nxt[0::2] = out + step
        nxt[1::2] = out - step
        out = nxt
    return out


def _detail_fields(system):
    """The level-k detail Delta_Q f evaluated on the finest grid, per level."""
    L = system.depth
    fine = 2**L
    fields = []
    for k in range(L):
        step = system.coeffs[k] * 2.0 ** (k / 2.0)
        block = np.empty(2 ** (k + 1))
        block[0::2] = step
        block[1::2] = -step
        fields.append(np.repeat(block, fine // 2 ** (k + 1)))
    return fields


def _mean_fields(system):
    L = system.depth
    fine = 2**L
    return [np.repeat(system.means[k], fine // 2**k) for k in range(L)]


def subtree_parseval_residual(values):
    """Max over cubes Q of |sum_{R inside Q} (b,h_R)^2 - int_Q |b - E_Q b|^2|."""
    values = np.asarray(values, dtype=float)
    sys_b = haar_decompose(values)
    L = sys_b.depth
    worst = 0.0
    # Bottom-up: coefficient energy inside each cube.
    energy = [c**2 for c in sys_b.coeffs]
    acc = energy[L - 1].copy() if L else np.zeros(1)
    for k in range(L - 1, -1, -1):
        if k < L - 1:
            acc = energy[k] + acc[0::2] + acc[1::2]
        width = 2.0 ** (-k)
        cells = values.reshape(2**k, -1)
        local = np.sum((cells - cells.mean(axis=1, keepdims=True)) ** 2, axis=1) * 2.0 ** (
            -L
        )
        worst = max(worst, float(np.max(np.abs(acc - local))))
    return worst


def product_identity_residual(b, f):
    """Defect of the finite-depth product expansion

    b f = (avg b)(avg f) + sum_Q E_Q b Delta_Q f + sum_Q Delta_Q b E_Q f
          + sum_Q Delta_Q b Delta_Q f,

    evaluated pointwise on the finest grid.
    """
    b = np.asarray(b, dtype=float)
    f = np.asarray(f, dtype=float)
    sys_b, sys_f = haar_decompose(b), haar_decompose(f)
    det_b, det_f = _detail_fields(sys_b), _detail_fields(sys_f)
    mean_b, mean_f = _mean_fields(sys_b), _mean_fields(sys_f)
    rhs = np.full(b.shape, sys_b.coarse_mean * sys_f.coarse_mean)
    for k in range(sys_b.depth):
        rhs += mean_b[k] * det_f[k] + det_b[k] * mean_f[k] + det_b[k] * det_f[k]
    return float(np.max(np.abs(b * f - rhs)))


def dyadic_bmo_sq(values):
    """sup_Q |Q|^{-1} sum_{R inside Q} (b, h_R)^2 (squared dyadic BMO norm)."""
    sys_b = haar_decompose(np.asarray(values, dtype=float))
    L = sys_b.depth
    if L == 0:
        return 0.0
    energy = [c**2 for c in sys_b.coeffs]
    acc = energy[L - 1].copy()
    worst = float(np.max(acc) * 2.0 ** (L - 1))
    for k in range(L - 2, -1, -1):
        acc = energy[k] + acc[0::2] + acc[1::2]
        worst = max(worst, float(np.max(acc) * 2.0**k))
    return worst


@dataclass
class ParaproductResult:
    field: np.ndarray
    energy: float
    bmo_energy_ratio: float


def paraproduct_plus(b, f, rel_tol=1e-10):
    """The paraproduct sum_Q (b, h_Q) (E_Q f) h_Q and its coefficient energy.

    By orthonormality the squared norm of the output equals
    sum_Q (b,h_Q)^2 (E_Q f)^2 exactly; this equality is verified before
    returning.  The ratio of the energy to (squared dyadic BMO of b) times
    (squared norm of f) is reported alongside.
    """
    b = np.asarray(b, dtype=float)
    f = np.asarray(f, dtype=float)
    sys_b, sys_f = haar_decompose(b), haar_decompose(f)
    L = sys_b.depth
    fine = 2**L
    out = np.zeros(fine)
    energy = 0.0
    for k in range(L):
        coeff = sys_b.coeffs[k] * sys_f.means[k]
        energy += float(np.sum(coeff**2))
        step = coeff * 2.0 ** (k / 2.0)
        block = np.empty(2 ** (k + 1))
        block[0::2] = step
        block[1::2] = -step
        out += np.repeat(block, fine // 2 ** (k + 1))
    norm_sq = float(np.sum(out**2) * 2.0 ** (-L))
    if abs(norm_sq - energy) > rel_tol * max(energy, 1.0):
        raise AssertionError(
            f"paraproduct energy identity failed: {norm_sq!r} vs {energy!r}"
        )
    denom = dyadic_bmo_sq(b) * float(np.sum(f**2) * 2.0 ** (-L))
    ratio = energy / denom if denom > 0.0 else 0.0
    return ParaproductResult(field=out, energy=energy, bmo_energy_ratio=ratio)
