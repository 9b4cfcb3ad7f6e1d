"""Dyadic grids on [0,1)^n with piecewise-constant fields and exact integrals.

A grid fixes an ambient dimension ``n``, a finest level ``L`` and a positive
cell density ``mu``; every field is constant on the ``2**(n*L)`` finest cells,
so every integral below is a finite sum and carries no quadrature error.  The
"all cubes" quantifier of the weight-class definitions is approximated by the
dyadic cubes of a handful of translated grids, enumerated so that the family
for ``shifts = K`` is a prefix of the family for ``K + 1``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .matrices import SpdMatrix

__all__ = [
    "Cube",
    "Grid",
    "WeightField",
    "FieldFormatError",
    "root_cube",
    "measure",
    "avg_matrix",
    "weighted_avg",
    "expectation_Et",
    "doubling_check",
    "write_weight_field",
    "read_weight_field",
]


@dataclass(frozen=True, order=True)
class Cube:
    """Dyadic cube 2**-level * ([0,1)^n + coords)."""

    level: int
    coords: tuple[int, ...]

    def __post_init__(self):
        if self.level < 0:
            raise ValueError(f"negative level {self.level}")
        if any(c < 0 or c >= 2**self.level for c in self.coords):
            raise ValueError(f"coords {self.coords} out of range at level {self.level}")

    @property
    def n(self):
        return len(self.coords)

    @property
    def sidelength(self):
        return 2.0 ** (-self.level)

    def children(self):
        base = tuple(2 * c for c in self.coords)
        return [
            Cube(self.level + 1, tuple(b + d for b, d in zip(base, offs)))
            for offs in itertools.product((0, 1), repeat=self.n)
        ]

    def parent(self):
        if self.level == 0:
            raise ValueError("root cube has no parent")
        return Cube(self.level - 1, tuple(c // 2 for c in self.coords))

    def contains(self, other):
        if other.level < self.level:
            return False
        shift = other.level - self.level
        return all(oc >> shift == c for oc, c in zip(other.coords, self.coords))

    def bounds(self):
        h = self.sidelength
        lo = np.array([c * h for c in self.coords])
        return lo, lo + h

    def cell_slices(self, finest_level):
        if self.level > finest_level:
            raise ValueError(f"cube level {self.level} exceeds finest level {finest_level}")
        span = 2 ** (finest_level - self.level)
        return tuple(slice(c * span, (c + 1) * span) for c in self.coords)

    def descriptor(self):
        return f"level={self.level} coords={','.join(map(str, self.coords))}"


def root_cube(n):
    return Cube(0, (0,) * n)


def _coarsen(arr, n):
    """Sum 2x...x2 sibling blocks along the first ``n`` axes."""
    shape = arr.shape
    half = shape[0] // 2
    new = arr.reshape(
        sum(((half, 2) for _ in range(n)), ()) + shape[n:]
    )
    return new.sum(axis=tuple(2 * k + 1 for k in range(n)))


class Grid:
    """Measured dyadic grid: dimension ``n``, finest level ``L``, density ``mu``."""

    def __init__(self, n, L, mu=None):
        if n < 1 or L < 0:
            raise ValueError(f"bad grid parameters n={n}, L={L}")
        self.n = int(n)
        self.L = int(L)
        side = 2**self.L
        shape = (side,) * self.n
        if mu is None:
            mu = np.ones(shape)
        mu = np.array(mu, dtype=float).reshape(shape)
        if not np.all(np.isfinite(mu)) or not np.all(mu > 0.0):
            raise ValueError("measure density must be finite and strictly positive")
        mu.setflags(write=False)
        self.mu = mu
        self.cell_volume = 2.0 ** (-self.n * self.L)
        # Integral of mu over every dyadic cube, one array per level.
        tree = [mu * self.cell_volume]
        for _ in range(self.L):
            tree.append(_coarsen(tree[-1], self.n))
        self._mu_tree = tree[::-1]

    @property
    def side(self):
        return 2**self.L

    def cubes(self, levels=None):
        if levels is None:
            levels = range(self.L + 1)
        for k in levels:
            for coords in itertools.product(range(2**k), repeat=self.n):
                yield Cube(k, coords)

    def measure(self, cube):
        return float(self._mu_tree[cube.level][cube.coords])

    def total_measure(self):
        return float(self._mu_tree[0][(0,) * self.n])

    def _axis_overlap(self, lo, hi):
        """Lengths of the overlap of [lo, hi) with each finest cell along one axis."""
        w = 2.0 ** (-self.L)
        edges = np.arange(self.side + 1) * w
        return np.clip(np.minimum(hi, edges[1:]) - np.maximum(lo, edges[:-1]), 0.0, None)

    def box_weights(self, lo, hi):
        """Per-axis overlap fractions (relative to cell volume) of an axis box."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        scale = 2.0**self.L
        return [self._axis_overlap(lo[i], hi[i]) * scale for i in range(self.n)]

    def box_integral(self, values, lo, hi):
        """Exact integral of a piecewise-constant field times mu over an axis box."""
        weights = self.box_weights(lo, hi)
        acc = values * self.mu.reshape(self.mu.shape + (1,) * (values.ndim - self.n))
        for w in weights:
            acc = np.tensordot(w, acc, axes=([0], [0]))
        return acc * self.cell_volume

    def measure_box(self, lo, hi):
        weights = self.box_weights(lo, hi)
        acc = self.mu
        for w in weights:
            acc = np.tensordot(w, acc, axes=([0], [0]))
        return float(acc) * self.cell_volume

    def shift_vectors(self, shifts):
        """Deterministic translation vectors; prefix-nested as ``shifts`` grows."""
        out = [np.zeros(self.n)]
        offsets = [1.0 / 3.0, 2.0 / 3.0, 1.0 / 9.0, 4.0 / 9.0, 7.0 / 9.0, 2.0 / 9.0]
        pool = itertools.product(offsets, repeat=self.n)
        lattice = sorted(set(itertools.product((0.0, 1.0 / 3.0, 2.0 / 3.0), repeat=self.n)))
        lattice.remove((0.0,) * self.n)
        candidates = [np.array(v) for v in lattice] + [np.array(v) for v in pool]
        for vec in candidates:
            if len(out) > shifts:
                break
            if any(np.allclose(vec, have) for have in out):
                continue
            out.append(vec)
        return out[: shifts + 1]

    def sampled_boxes(self, shifts, levels=None):
        """The finite surrogate for "all cubes": dyadic plus translated grids.

        Yields ``(lo, hi, descriptor)`` for every cube of every translated grid
        that lies fully inside [0,1)^n.
        """
        if levels is None:
            levels = range(self.L + 1)
        for s_idx, s in enumerate(self.shift_vectors(shifts)):
            for k in levels:
                h = 2.0 ** (-k)
                counts = [int(np.floor((1.0 - s[i]) / h + 1e-12)) for i in range(self.n)]
                if any(c <= 0 for c in counts):
                    continue
                for pos in itertools.product(*(range(c) for c in counts)):
                    lo = s + np.array(pos) * h
                    hi = lo + h
                    if np.any(hi > 1.0 + 1e-12):
                        continue
                    desc = f"shift={s_idx} level={k} pos={','.join(map(str, pos))}"
                    yield lo, hi, desc

    def doubling_constant(self, shifts=0, levels=None):
        """Sup over sampled cubes of mu(2Q)/mu(Q), with 2Q clipped to [0,1)^n."""
        if levels is None:
            levels = range(self.L + 2)
        worst = 0.0
        for lo, hi, _ in self.sampled_boxes(shifts, levels):
            h = hi - lo
            lo2 = np.clip(lo - h / 2.0, 0.0, 1.0)
            hi2 = np.clip(hi + h / 2.0, 0.0, 1.0)
            ratio = self.measure_box(lo2, hi2) / self.measure_box(lo, hi)
            if ratio > worst:
                worst = ratio
        return worst


class WeightField:
    """SPD matrix weight on a measured grid, with cached cube integrals.

    ``values`` has shape ``(2**L,)*n + (N, N)``; every cell matrix must be
    symmetric positive definite.  Cube integrals of cell-wise functions of the
    weight (powers, log-determinants) are aggregated bottom-up once and reused.
    """

    def __init__(self, grid, values):
        side = grid.side
        values = np.array(values, dtype=float)
        expected_lead = (side,) * grid.n
        if values.shape[: grid.n] != expected_lead or values.ndim != grid.n + 2:
            raise ValueError(f"weight field shape {values.shape} does not match grid")
        N = values.shape[-1]
        if values.shape[-2] != N:
            raise ValueError("weight cells must be square matrices")
        values = (values + np.swapaxes(values, -1, -2)) / 2.0
        w, v = np.linalg.eigh(values)
        scale = np.max(np.abs(w), axis=-1)
        if np.any(w[..., 0] <= 1e-13 * scale):
            bad = np.argwhere(w[..., 0] <= 1e-13 * scale)[0]
            raise ValueError(f"weight cell {tuple(bad)} is not positive definite")
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        self.N = N
        self._cell_eigvals = w
        self._cell_eigvecs = v
        self._cell_cache = {}
        self._tree_cache = {}
        self._avg_cache = {}

    # Cell-wise derived quantities -------------------------------------------------

    @property
    def cell_eigvals(self):
        return self._cell_eigvals

    @property
    def cell_eigvecs(self):
        return self._cell_eigvecs

    def cell_power(self, exponent):
        key = ("pow", exponent)
        if key not in self._cell_cache:
            w, v = self._cell_eigvals, self._cell_eigvecs
            self._cell_cache[key] = np.einsum(
                "...ij,...j,...kj->...ik", v, np.power(w, float(exponent)), v
            )
        return self._cell_cache[key]

    def cell_log_det(self):
        key = ("logdet",)
        if key not in self._cell_cache:
            self._cell_cache[key] = np.sum(np.log(self._cell_eigvals), axis=-1)
        return self._cell_cache[key]

    def cell_inv_sqrt_norms(self, directions):
        """|W(cell)^{-1/2} a| for a stack of directions, shape (cells..., dirs)."""
        w, v = self._cell_eigvals, self._cell_eigvecs
        proj = np.einsum("...ji,dj->...di", v, np.asarray(directions, dtype=float))
        return np.sqrt(np.einsum("...di,...i->...d", proj**2, 1.0 / w))

    # Cube integrals ----------------------------------------------------------------

    def _tree(self, key, cell_values):
        if key not in self._tree_cache:
            g = self.grid
            mu = g.mu.reshape(g.mu.shape + (1,) * (cell_values.ndim - g.n))
            tree = [cell_values * mu * g.cell_volume]
            for _ in range(g.L):
                tree.append(_coarsen(tree[-1], g.n))
            self._tree_cache[key] = tree[::-1]
        return self._tree_cache[key]

    def integral_tree(self, exponent):
        """Per-level arrays of the cube integrals of W**exponent d(mu)."""
        return self._tree(("pow", exponent), self.cell_power(exponent))

    def log_det_tree(self):
        return self._tree(("logdet",), self.cell_log_det())

    def cube_integral(self, cube, exponent):
        return self.integral_tree(exponent)[cube.level][cube.coords]

    def avg_entries(self, cube, exponent=1):
        key = (cube, exponent)
        if key not in self._avg_cache:
            mu_q = self.grid.measure(cube)
            self._avg_cache[key] = self.cube_integral(cube, exponent) / mu_q
        return self._avg_cache[key]

    def avg(self, cube):
        return SpdMatrix(self.avg_entries(cube, 1))

    def box_avg_entries(self, lo, hi, exponent=1):
        mu_q = self.grid.measure_box(lo, hi)
        return self.grid.box_integral(self.cell_power(exponent), lo, hi) / mu_q

    def box_avg_log_det(self, lo, hi):
        mu_q = self.grid.measure_box(lo, hi)
        return float(self.grid.box_integral(self.cell_log_det(), lo, hi)) / mu_q

    def cube_avg_log_det(self, cube):
        return float(self.log_det_tree()[cube.level][cube.coords]) / self.grid.measure(cube)


# Free-function forms of the core operations --------------------------------------


def measure(cube, grid):
    """Exact mu-measure of a dyadic cube."""
    return grid.measure(cube)


def avg_matrix(weight, cube, grid=None):
    """The mu-average of the weight over a cube, as an SPD matrix."""
    return weight.avg(cube)


def weighted_avg(f, cube, weight, grid=None):
    """Matrix weighted average: (int_Q W dmu)^{-1} int_Q W f dmu."""
    g = weight.grid
    slices = cube.cell_slices(g.L)
    f = np.asarray(f, dtype=float)
    mu = g.mu[slices]
    w_block = weight.values[slices]
    f_block = f[slices]
    axes = tuple(range(g.n))
    iw = np.sum(
        w_block * mu.reshape(mu.shape + (1, 1)) * g.cell_volume, axis=axes
    )
    iwf = np.sum(
        np.einsum("...ij,...j->...i", w_block, f_block)
        * mu.reshape(mu.shape + (1,))
        * g.cell_volume,
        axis=axes,
    )
    try:
        return np.linalg.solve(iw, iwf)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - SPD fields cannot trigger
        raise ValueError(f"singular weight integral over {cube.descriptor()}") from exc


def expectation_Et(f, t_level, weight, grid=None):
    """Field version of the weighted average: constant on each level-t cube."""
    g = weight.grid
    if t_level < 0 or t_level > g.L:
        raise ValueError(f"level {t_level} outside [0, {g.L}]")
    f = np.asarray(f, dtype=float)
    mu = g.mu.reshape(g.mu.shape + (1,))
    cell_iwf = np.einsum("...ij,...j->...i", weight.values, f) * mu * g.cell_volume
    tree_iwf = [cell_iwf]
    for _ in range(g.L - t_level):
        tree_iwf.append(_coarsen(tree_iwf[-1], g.n))
    iw = weight.integral_tree(1)[t_level]
    out = np.linalg.solve(iw, tree_iwf[-1][..., None])[..., 0]
    for _ in range(g.L - t_level):
        out = _refine(out, g.n)
    return out


def _refine(arr, n):
    for axis in range(n):
        arr = np.repeat(arr, 2, axis=axis)
    return arr


def doubling_check(grid, shifts=0):
    """Sup over sampled cubes of mu(2Q)/mu(Q)."""
    return grid.doubling_constant(shifts)


# Weight-field file format ---------------------------------------------------------


class FieldFormatError(ValueError):
    """Malformed weight-field file; carries the offending line number."""

    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


def write_weight_field(path, weight):
    """Text format: header ``n N L``, then one line per finest cell with the
    mu-density followed by the N*N row-major weight entries, 17 significant
    digits each (bit-exact round-trip for doubles)."""
    g = weight.grid
    lines = [f"{g.n} {weight.N} {g.L}"]
    flat_mu = g.mu.reshape(-1)
    flat_w = weight.values.reshape(-1, weight.N * weight.N)
    for dens, row in zip(flat_mu, flat_w):
        nums = [dens, *row]
        lines.append(" ".join(f"{x:.17g}" for x in nums))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_weight_field(path):
    with open(path) as fh:
        raw = fh.read().splitlines()
    if not raw:
        raise FieldFormatError("empty file", 1)
    head = raw[0].split()
    if len(head) != 3:
        raise FieldFormatError("expected header 'n N L'", 1)
    try:
        n, N, L = (int(x) for x in head)
    except ValueError:
        raise FieldFormatError("header fields must be integers", 1) from None
    cells = 2 ** (n * L)
    if len(raw) < cells + 1:
        raise FieldFormatError(f"expected {cells} cell lines, found {len(raw) - 1}", len(raw))
    mu = np.empty(cells)
    values = np.empty((cells, N, N))
    for i in range(cells):
        parts = raw[i + 1].split()
        if len(parts) != 1 + N * N:
            raise FieldFormatError(
                f"expected {1 + N * N} numbers, found {len(parts)}", i + 2
            )
        try:
            nums = np.array([float(p) for p in parts])
        except ValueError:
            raise FieldFormatError("unparsable number", i + 2) from None
        mu[i] = nums[0]
        values[i] = nums[1:].reshape(N, N)
    side = 2**L
    try:
        grid = Grid(n, L, mu.reshape((side,) * n))
        return WeightField(grid, values.reshape((side,) * n + (N, N)))
    except ValueError as exc:
        raise FieldFormatError(str(exc), 2) from None
