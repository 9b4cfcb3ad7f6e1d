"""Class constants for matrix weights: reverse Hoelder, A-infinity and friends.

Each constant is a supremum over the sampled cube family of a per-cube ratio
built from averages of powers of the weight.  With ``S = (avg W^2)^{1/2}`` and
``V = avg W`` over a cube, the transfer matrix ``A = S V^{-1}`` has all
singular values >= 1, which pins the exact identities tested elsewhere:
the direction-sup constant equals ``|A|``, the squared variant equals
``|A|^2`` and ``|A| <= det A <= |A|^N``.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field as dc_field

import numpy as np

from .grid import Cube, WeightField

__all__ = [
    "ClassReport",
    "class_report",
    "b2_constants",
    "ainf_constants",
    "thewest_constant",
    "a2_constant",
    "det_chain_check",
    "scalar_ainfty_report",
    "ScalarAinftyReport",
    "corollary_relations",
    "CorollaryReport",
    "cube_ratios",
    "default_shifts",
]


def default_shifts(grid):
    """Extra translated grids so that the total family has 3**n grids."""
    return 3**grid.n - 1


def _stable_rng(seed, tag):
    return np.random.default_rng(
        np.random.SeedSequence([seed & 0xFFFFFFFF, zlib.crc32(tag.encode())])
    )


def _directions(n_dim, count, rng):
    basis = np.concatenate([np.eye(n_dim), -np.eye(n_dim)])
    if count <= 0:
        return basis
    extra = rng.standard_normal((count, n_dim))
    extra /= np.linalg.norm(extra, axis=1, keepdims=True)
    return np.concatenate([basis, extra])


def _block(grid, lo, hi):
    """Contiguous cell block touched by an axis box, plus per-axis weights."""
    weights = grid.box_weights(lo, hi)
    slices = []
    trimmed = []
    for w in weights:
        nz = np.nonzero(w)[0]
        a, b = int(nz[0]), int(nz[-1]) + 1
        slices.append(slice(a, b))
        trimmed.append(w[a:b])
    return tuple(slices), trimmed


def _cell_weights(grid, slices, trimmed):
    w = trimmed[0]
    for t in trimmed[1:]:
        w = np.multiply.outer(w, t)
    return w * grid.mu[slices] * grid.cell_volume


def cube_ratios(field, lo, hi, directions=None, want_ainf_i=False):
    """All per-cube class ratios for one axis box.

    Returns a dict with keys b2_i, b2_ii, b2_iii, b2_iv, ainf_ii, a2, thewest,
    chain (the five-term determinant chain) and, when requested, ainf_i and
    b2_sampled (the direction-sampled lower bound for b2_i).
    """
    g = field.grid
    slices, trimmed = _block(g, lo, hi)
    cw = _cell_weights(g, slices, trimmed)
    mu_q = float(cw.sum())
    axes = tuple(range(g.n))
    cwm = cw.reshape(cw.shape + (1, 1))

    def avg_power(expo):
        block = field.cell_power(expo)[slices]
        return np.sum(block * cwm, axis=axes) / mu_q

    avg_w = avg_power(1)
    avg_w2 = avg_power(2)
    avg_winv = avg_power(-1)
    avg_winv2 = avg_power(-2)
    avg_logdet = float(np.sum(field.cell_log_det()[slices] * cw)) / mu_q

    ew, vv = np.linalg.eigh(avg_w)
    det_w = float(np.prod(ew))
    inv_w = (vv / ew) @ vv.T
    inv_sqrt_w = (vv / np.sqrt(ew)) @ vv.T
    ew2, vv2 = np.linalg.eigh(avg_w2)
    det_w2 = float(np.prod(ew2))
    sqrt_w2 = (vv2 * np.sqrt(ew2)) @ vv2.T

    transfer = sqrt_w2 @ inv_w
    b2_ii = float(np.linalg.svd(transfer, compute_uv=False)[0])
    item_iii = inv_w @ avg_w2 @ inv_w
    b2_iii = float(np.max(np.abs(np.linalg.eigvalsh((item_iii + item_iii.T) / 2.0))))
    b2_iv = float(np.sqrt(det_w2) / det_w)

    out = {
        "b2_i": b2_ii,
        "b2_ii": b2_ii,
        "b2_iii": b2_iii,
        "b2_iv": b2_iv,
        "ainf_ii": det_w / np.exp(avg_logdet),
        "a2": det_w * float(np.prod(np.linalg.eigvalsh(avg_winv))),
        "thewest": det_w2 / np.exp(2.0 * avg_logdet),
        "chain": (
            float(np.sqrt(det_w2)),
            det_w,
            float(np.exp(avg_logdet)),
            1.0 / float(np.prod(np.linalg.eigvalsh(avg_winv))),
            1.0 / float(np.sqrt(np.prod(np.linalg.eigvalsh(avg_winv2)))),
        ),
    }

    if directions is not None:
        # Sampled lower bound for the direction-sup form of the reverse
        # Hoelder constant; the exact value is the operator norm above.
        num = np.linalg.norm(directions @ sqrt_w2.T, axis=1)
        den = np.linalg.norm(directions @ avg_w.T, axis=1)
        out["b2_sampled"] = float(np.max(num / den))
        if want_ainf_i:
            w_cells = field.cell_eigvals[slices]
            v_cells = field.cell_eigvecs[slices]
            proj = np.einsum("...ji,dj->...di", v_cells, directions)
            norms = np.sqrt(np.einsum("...di,...i->...d", proj**2, 1.0 / w_cells))
            avg_log = (
                np.sum(np.log(norms) * cw[..., None], axis=tuple(range(cw.ndim))) / mu_q
            )
            den_i = np.linalg.norm(directions @ inv_sqrt_w.T, axis=1)
            out["ainf_i"] = float(np.max(np.exp(avg_log) / den_i))
    return out


_SUP_KEYS = ("b2_i", "b2_ii", "b2_iii", "b2_iv", "ainf_i", "ainf_ii", "a2", "thewest")


def _family_scan(field, shifts=None, directions=64, seed=0, want_ainf_i=True, levels=None):
    g = field.grid
    if shifts is None:
        shifts = default_shifts(g)
    sups = {}
    worst = {}
    count = 0
    for lo, hi, desc in g.sampled_boxes(shifts, levels):
        rng = _stable_rng(seed, desc)
        dirs = _directions(field.N, directions, rng)
        ratios = cube_ratios(field, lo, hi, directions=dirs, want_ainf_i=want_ainf_i)
        count += 1
        if ratios.get("b2_sampled", 0.0) > ratios["b2_ii"] * (1.0 + 1e-9):
            raise AssertionError(
                f"sampled direction ratio exceeded the operator norm on {desc}"
            )
        for key in _SUP_KEYS:
            if key not in ratios:
                continue
            val = float(ratios[key])
            if key not in sups or val > sups[key]:
                sups[key] = val
                worst[key] = desc
    return sups, worst, count


@dataclass
class ClassReport:
    b2_i: float
    b2_ii: float
    b2_iii: float
    b2_iv: float
    ainf_i: float
    ainf_ii: float
    a2: float
    thewest: float
    doubling: float
    cube_count: int
    worst_cubes: dict = dc_field(default_factory=dict)

    def as_dict(self):
        return {
            "b2_i": self.b2_i,
            "b2_ii": self.b2_ii,
            "b2_iii": self.b2_iii,
            "b2_iv": self.b2_iv,
            "ainf_i": self.ainf_i,
            "ainf_ii": self.ainf_ii,
            "a2": self.a2,
            "thewest": self.thewest,
            "doubling": self.doubling,
            "worst_cubes": dict(self.worst_cubes),
        }


def class_report(field, shifts=None, directions=64, seed=0):
    sups, worst, count = _family_scan(field, shifts, directions, seed, want_ainf_i=True)
    doubling = field.grid.doubling_constant(
        shifts if shifts is not None else default_shifts(field.grid)
    )
    return ClassReport(
        b2_i=sups["b2_i"],
        b2_ii=sups["b2_ii"],
        b2_iii=sups["b2_iii"],
        b2_iv=sups["b2_iv"],
        ainf_i=sups["ainf_i"],
        ainf_ii=sups["ainf_ii"],
        a2=sups["a2"],
        thewest=sups["thewest"],
        doubling=doubling,
        cube_count=count,
        worst_cubes=worst,
    )


def b2_constants(field, shifts=None, directions=64, seed=0):
    sups, _, _ = _family_scan(field, shifts, directions, seed, want_ainf_i=False)
    return sups["b2_i"], sups["b2_ii"], sups["b2_iii"], sups["b2_iv"]


def ainf_constants(field, shifts=None, directions=64, seed=0):
    sups, _, _ = _family_scan(field, shifts, directions, seed, want_ainf_i=True)
    return sups["ainf_i"], sups["ainf_ii"]


def thewest_constant(field, shifts=None):
    sups, _, _ = _family_scan(field, shifts, directions=0, seed=0, want_ainf_i=False)
    return sups["thewest"]


def a2_constant(field, shifts=None):
    sups, _, _ = _family_scan(field, shifts, directions=0, seed=0, want_ainf_i=False)
    return sups["a2"]


def det_chain_check(field, cube_or_box, rel_tol=1e-9):
    """The five-term determinant chain for one cube, asserted monotone.

    Returns (det(avg W^2)^{1/2}, det(avg W), exp(avg ln det W),
    det(avg W^{-1})^{-1}, det(avg W^{-2})^{-1/2}), which must be nonincreasing.
    """
    if isinstance(cube_or_box, Cube):
        lo, hi = cube_or_box.bounds()
    else:
        lo, hi = cube_or_box
    chain = cube_ratios(field, lo, hi)["chain"]
    for a, b in zip(chain, chain[1:]):
        if a < b - rel_tol * max(abs(a), abs(b), 1.0):
            raise AssertionError(f"determinant chain out of order: {chain}")
    return chain


@dataclass
class ScalarAinftyReport:
    a_p: dict
    ainf: float
    alpha_beta: list
    delta_fit: float
    delta_offset: float
    b_q: dict

    def as_dict(self):
        return {
            "a_p": {str(k): v for k, v in self.a_p.items()},
            "ainf": self.ainf,
            "alpha_beta": [list(x) for x in self.alpha_beta],
            "delta_fit": self.delta_fit,
            "delta_offset": self.delta_offset,
            "b_q": {str(k): v for k, v in self.b_q.items()},
        }


def scalar_ainfty_report(
    field,
    shifts=None,
    p_grid=(1.25, 1.5, 2.0, 3.0),
    q_grid=(1.25, 1.5, 2.0, 3.0),
    densities=(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
    draws=32,
    seed=0,
):
    """Scalar weight conditions: A_p-prime, A-infinity, subset absorption, B_q.

    The subset conditions are sampled on dyadic cubes only, using random
    unions of finest cells as the grid-measurable subsets.
    """
    if field.N != 1:
        raise ValueError("scalar report needs a 1x1 weight field")
    g = field.grid
    if shifts is None:
        shifts = default_shifts(g)
    w_cells = field.values[..., 0, 0]
    mu_cells = g.mu * g.cell_volume
    sigma_cells = w_cells * mu_cells

    a_p = {p: 0.0 for p in p_grid}
    b_q = {q: 0.0 for q in q_grid}
    ainf = 0.0
    for lo, hi, desc in g.sampled_boxes(shifts):
        slices, trimmed = _block(g, lo, hi)
        cw = _cell_weights(g, slices, trimmed)
        mu_q = float(cw.sum())
        wb = w_cells[slices]
        avg_w = float(np.sum(wb * cw)) / mu_q
        avg_log = float(np.sum(np.log(wb) * cw)) / mu_q
        ainf = max(ainf, avg_w / np.exp(avg_log))
        for p in p_grid:
            avg_neg = float(np.sum(wb ** (-(p - 1.0)) * cw)) / mu_q
            a_p[p] = max(a_p[p], avg_w * avg_neg ** (1.0 / (p - 1.0)))
        for q in q_grid:
            avg_q = float(np.sum(wb**q * cw)) / mu_q
            b_q[q] = max(b_q[q], avg_q ** (1.0 / q) / avg_w)

    mu_ratios = []
    sigma_ratios = []
    for cube in g.cubes():
        sl = cube.cell_slices(g.L)
        mu_block = mu_cells[sl].reshape(-1)
        sigma_block = sigma_cells[sl].reshape(-1)
        if mu_block.size < 2:
            continue
        mu_q = float(mu_block.sum())
        sigma_q = float(sigma_block.sum())
        rng = _stable_rng(seed, f"subsets:{cube.descriptor()}")
        for _ in range(draws):
            dens = rng.choice(densities)
            mask = rng.random(mu_block.size) < dens
            if not mask.any() or mask.all():
                continue
            mu_ratios.append(float(mu_block[mask].sum()) / mu_q)
            sigma_ratios.append(float(sigma_block[mask].sum()) / sigma_q)

    alpha_beta = []
    mu_arr = np.array(mu_ratios)
    sig_arr = np.array(sigma_ratios)
    for beta in densities:
        sel = mu_arr <= beta
        alpha = float(sig_arr[sel].max()) if sel.any() else 0.0
        alpha_beta.append((beta, alpha))
    xs = np.log(mu_arr)
    ys = np.log(sig_arr)
    design = np.stack([xs, np.ones_like(xs)], axis=1)
    (slope, offset), *_ = np.linalg.lstsq(design, ys, rcond=None)
    return ScalarAinftyReport(
        a_p=a_p,
        ainf=ainf,
        alpha_beta=alpha_beta,
        delta_fit=float(slope),
        delta_offset=float(offset),
        b_q=b_q,
    )


@dataclass
class CorollaryReport:
    identity_residual: float
    thewest: float
    b2_iv: float
    ainf_ii: float
    scalar_b2: list
    b2_ii: float
    scalar_ok: bool

    def as_dict(self):
        return {
            "identity_residual": self.identity_residual,
            "thewest": self.thewest,
            "b2_iv": self.b2_iv,
            "ainf_ii": self.ainf_ii,
            "scalar_b2": list(self.scalar_b2),
            "b2_ii": self.b2_ii,
            "scalar_ok": self.scalar_ok,
        }


def corollary_relations(field, shifts=None, directions=8, seed=0, rel_tol=1e-9):
    """Relations tying the squared-weight condition to the component classes.

    Per cube the identity ``thewest_ratio = (b2_iv_ratio * ainf_ii_ratio)^2``
    holds exactly; the report carries the worst relative residual.  For
    sampled directions ``a`` the scalar weight ``|W(x) a|`` satisfies the
    scalar reverse Hoelder bound with constant at most ``b2_ii``.
    """
    g = field.grid
    if shifts is None:
        shifts = default_shifts(g)
    worst_resid = 0.0
    sup_thewest = sup_b2iv = sup_ainfii = sup_b2ii = 1.0
    for lo, hi, desc in g.sampled_boxes(shifts):
        r = cube_ratios(field, lo, hi)
        combined = (r["b2_iv"] * r["ainf_ii"]) ** 2
        resid = abs(r["thewest"] - combined) / max(r["thewest"], 1.0)
        worst_resid = max(worst_resid, resid)
        sup_thewest = max(sup_thewest, r["thewest"])
        sup_b2iv = max(sup_b2iv, r["b2_iv"])
        sup_ainfii = max(sup_ainfii, r["ainf_ii"])
        sup_b2ii = max(sup_b2ii, r["b2_ii"])

    rng = _stable_rng(seed, "corollary-directions")
    dirs = _directions(field.N, max(directions - 2 * field.N, 0), rng)
    scalar_vals = []
    for d in dirs:
        w_a = np.linalg.norm(
            np.einsum("...ij,j->...i", field.values, d), axis=-1
        )
        scalar = WeightField(g, w_a.reshape(w_a.shape + (1, 1)))
        _, s_b2, _, _ = b2_constants(scalar, shifts=shifts, directions=0)
        scalar_vals.append(s_b2)
    scalar_ok = all(v <= sup_b2ii * (1.0 + rel_tol) + rel_tol for v in scalar_vals)
    return CorollaryReport(
        identity_residual=worst_resid,
        thewest=sup_thewest,
        b2_iv=sup_b2iv,
        ainf_ii=sup_ainfii,
        scalar_b2=scalar_vals,
        b2_ii=sup_b2ii,
        scalar_ok=scalar_ok,
    )
