"""Ordered 1D grids and the dyadic mesh generator.

A dyadic partition of [a, b] is a set of cells [a + k H/2^l, a + (k+1) H/2^l].
Cells are stored as exact (numerator, level) integer pairs relative to the
interval, so nestedness checks across the generated family are exact set
inclusions, free of floating-point drift.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .lgl import Interval, build_lgl_rule

__all__ = [
    "OrderedGrid",
    "DyadicPartition",
    "NestedDyadicFamily",
    "dyadic_generate",
    "build_nested_family",
    "check_local_equivalence",
    "check_quasiuniform",
]


@dataclass(frozen=True)
class OrderedGrid:
    """Strictly increasing point set spanning an interval."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("grid needs at least two points")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_lgl(cls, rule):
        return cls(rule.nodes)

    @property
    def interval(self):
        return Interval(float(self.points[0]), float(self.points[-1]))

    @property
    def cell_lengths(self):
        return np.diff(self.points)


class DyadicPartition:
    """Dyadic partition of an interval, cells stored as (numerator, level)."""

    def __init__(self, interval, cells=None):
        self.interval = interval
        if cells is None:
            cells = ((0, 0),)
        cells = tuple(sorted(cells, key=lambda c: Fraction(c[0], 2 ** c[1])))
        self._validate(cells)
        self.cells = cells

    @staticmethod
    def _validate(cells):
        pos = Fraction(0)
        for k, lev in cells:
            if Fraction(k, 2**lev) != pos:
                raise ValueError("cells do not tile the interval")
            pos += Fraction(1, 2**lev)
        if pos != 1:
            raise ValueError("cells do not tile the interval")

    @property
    def levels(self):
        return np.array([lev for _, lev in self.cells])

    def breakpoint_fractions(self):
        """Breakpoints as exact fractions of the interval, including ends."""
        fracs = [Fraction(0)]
        for k, lev in self.cells:
            fracs.append(Fraction(k + 1, 2**lev))
        return fracs

    @property
    def breakpoints(self):
        a, h = self.interval.a, self.interval.length
        return np.array([a + h * float(f) for f in self.breakpoint_fractions()])

    @property
    def cell_lengths(self):
        h = self.interval.length
        return np.array([h / 2**lev for _, lev in self.cells])

    def __len__(self):
        return len(self.cells)

    def __eq__(self, other):
        return self.interval == other.interval and self.cells == other.cells

    def refines(self, other):
        """True if this partition's breakpoints contain the other's (exactly)."""
        return set(other.breakpoint_fractions()) <= set(self.breakpoint_fractions())

    def is_symmetric(self):
        half = Fraction(1, 2)
        fracs = set(self.breakpoint_fractions())
        return all(1 - f in fracs for f in fracs)

    def dump(self):
        """Text dump as one '(numerator, level)' pair per line (debug/golden)."""
        return "\n".join(f"({k}, {lev})" for k, lev in self.cells)


@dataclass(frozen=True)
class NestedDyadicFamily:
    """Family p -> dyadic partition, nested by construction."""

    alpha: float
    interval: Interval
    partitions: dict


def _smallest_overlapping_cell(lo, hi, grid_points, grid_lengths):
    """Length of the smallest grid interval overlapping (lo, hi) in measure."""
    j0 = int(np.searchsorted(grid_points, lo, side="right")) - 1
    j1 = int(np.searchsorted(grid_points, hi, side="left"))
    j0 = max(j0, 0)
    j1 = min(j1, len(grid_lengths))
    if j0 >= j1:  # degenerate guard; cannot happen for cells inside the span
        raise RuntimeError("dyadic cell does not overlap the grid")
    return float(np.min(grid_lengths[j0:j1]))


def dyadic_generate(grid, seed, alpha):
    """Halve cells until no cell exceeds alpha times any grid interval it
    overlaps in measure; returns the unique fixed point refining the seed.

    The stopping rule is enforced against the smallest overlapping grid
    interval, which makes the grids locally (alpha^-1, B)-uniformly
    equivalent with a sharp lower bound. Cells are scanned left to right and
    re-scanned until no split fires; the fixed point does not depend on the
    order.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if seed.interval != grid.interval:
        raise ValueError("seed partition and grid span different intervals")
    a, h = grid.interval.a, grid.interval.length
    pts = grid.points
    lens = grid.cell_lengths
    work = list(seed.cells)
    out = []
    while work:
        k, lev = work.pop(0)
        size = h / 2**lev
        lo = a + h * (k / 2**lev)
        hi = lo + size
        if size > alpha * _smallest_overlapping_cell(lo, hi, pts, lens):
            work[:0] = [(2 * k, lev + 1), (2 * k + 1, lev + 1)]
        else:
            out.append((k, lev))
    return DyadicPartition(grid.interval, out)


def build_nested_family(p_max, interval, alpha):
    """Nested dyadic partitions driven by the LGL grids of orders 1..p_max."""
    if p_max < 1:
        raise ValueError("p_max must be >= 1")
    partitions = {}
    current = DyadicPartition(interval)
    for p in range(1, p_max + 1):
        grid = OrderedGrid.from_lgl(build_lgl_rule(p, interval))
        current = dyadic_generate(grid, current, alpha)
        partitions[p] = current
    return NestedDyadicFamily(alpha, interval, partitions)


def extend_family(family, p_max):
    """Grow a nested family in place up to p_max, preserving nestedness."""
    top = max(family.partitions)
    current = family.partitions[top]
    for p in range(top + 1, p_max + 1):
        grid = OrderedGrid.from_lgl(build_lgl_rule(p, family.interval))
        current = dyadic_generate(grid, current, family.alpha)
        family.partitions[p] = current
    return family


def check_local_equivalence(g1, g2):
    """(min, max) of |I_j| / |I~_l| over cell pairs overlapping in measure."""
    p1, p2 = np.asarray(g1.points), np.asarray(g2.points)
    if not np.isclose(p1[0], p2[0]) or not np.isclose(p1[-1], p2[-1]):
        raise ValueError("grids span different intervals")
    lo, hi = np.inf, 0.0
    j = 0
    for i in range(len(p1) - 1):
        li = p1[i + 1] - p1[i]
        while p2[j + 1] <= p1[i] and j < len(p2) - 2:
            j += 1
        k = j
        while k < len(p2) - 1 and p2[k] < p1[i + 1]:
            ratio = li / (p2[k + 1] - p2[k])
            lo, hi = min(lo, ratio), max(hi, ratio)
            k += 1
    return lo, hi


def check_quasiuniform(grid):
    """Max adjacent-cell length ratio; 1 for grids with fewer than 2 cells."""
    lens = grid.cell_lengths
    if len(lens) < 2:
        return 1.0
    r = lens[1:] / lens[:-1]
    return float(max(np.max(r), np.max(1.0 / r)))
