"""Univariate Legendre / Legendre-Gauss-Lobatto machinery.

Nodes and weights are computed on the reference interval [-1, 1] by Newton
iteration and mapped affinely; everything downstream (quadrature, barycentric
interpolation, differentiation matrices) works on arbitrary intervals.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "Interval",
    "LglRule",
    "build_lgl_rule",
    "gauss_rule",
    "quadrature",
    "barycentric_weights",
    "poly_eval_matrix",
    "diff_matrix",
    "interpolate_polynomial",
    "check_trace_inequality",
]

_NEWTON_TOL = 1e-14
_NEWTON_MAXIT = 100


@dataclass(frozen=True)
class Interval:
    """Bounded interval [a, b] with positive length."""

    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError(f"degenerate interval [{self.a}, {self.b}]")

    @property
    def length(self):
        return self.b - self.a

    @property
    def midpoint(self):
        return 0.5 * (self.a + self.b)


def _legendre_pair(p, x):
    """Evaluate (L_p, L_{p-1}) at x by the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    lm, l = np.ones_like(x), x.copy()
    if p == 0:
        return lm, np.zeros_like(x)
    for k in range(2, p + 1):
        lm, l = l, ((2 * k - 1) * x * l - (k - 1) * lm) / k
    return l, lm


@lru_cache(maxsize=None)
def _lgl_reference(p):
    """LGL nodes and weights of order p on [-1, 1].

    Interior nodes are the roots of L_p'; they solve (1-x^2) L_p'(x) = 0 and
    are found by Newton iteration from Chebyshev-Gauss-Lobatto guesses, using
    (1-x^2) L_p'(x) = p (L_{p-1}(x) - x L_p(x)) and the Legendre ODE for the
    derivative of the iteration function.
    """
    if p == 1:
        return np.array([-1.0, 1.0]), np.array([1.0, 1.0])
    x = -np.cos(np.pi * np.arange(p + 1) / p)
    for _ in range(_NEWTON_MAXIT):
        l, lm = _legendre_pair(p, x[1:-1])
        dx = (lm - x[1:-1] * l) / ((p + 1) * l)
        x[1:-1] += dx
        if np.max(np.abs(dx)) < _NEWTON_TOL:
            break
    else:
        raise RuntimeError(f"LGL Newton iteration did not converge for p={p}")
    # enforce exact symmetry; roots of L_p' come in +/- pairs
    x = 0.5 * (x - x[::-1])
    x[0], x[-1] = -1.0, 1.0
    l, _ = _legendre_pair(p, x)
    w = 2.0 / (p * (p + 1) * l**2)
    w = 0.5 * (w + w[::-1])
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=None)
def _gauss_reference(n):
    """n-point Gauss-Legendre nodes and weights on [-1, 1] (roots of L_n)."""
    x = -np.cos(np.pi * (np.arange(n) + 0.75) / (n + 0.5))
    for _ in range(_NEWTON_MAXIT):
        l, lm = _legendre_pair(n, x)
        # L_n'(x) = n (L_{n-1}(x) - x L_n(x)) / (1 - x^2)
        dl = n * (lm - x * l) / (1.0 - x**2)
        dx = l / dl
        x -= dx
        if np.max(np.abs(dx)) < _NEWTON_TOL:
            break
    else:
        raise RuntimeError(f"Gauss Newton iteration did not converge for n={n}")
    _, lm = _legendre_pair(n, x)
    dl = n * (lm - x * _legendre_pair(n, x)[0]) / (1.0 - x**2)
    w = 2.0 / ((1.0 - x**2) * dl**2)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@dataclass(frozen=True)
class LglRule:
    """LGL quadrature rule of order ``degree`` on ``interval``.

    ``nodes`` holds the degree+1 quadrature points including both endpoints;
    ``weights`` the positive quadrature weights, summing to the interval
    length. The rule integrates polynomials of degree <= 2*degree - 1 exactly.
    """

    degree: int
    interval: Interval
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def cell_lengths(self):
        """Lengths of the p intervals of the induced partition."""
        return np.diff(self.nodes)

    def __hash__(self):
        return hash((self.degree, self.interval))


def build_lgl_rule(p, interval):
    """Build the order-p LGL rule on the given interval.

    Raises ValueError for p < 1; degenerate intervals are rejected by
    Interval itself.
    """
    if p < 1:
        raise ValueError(f"LGL order must be >= 1, got {p}")
    xhat, what = _lgl_reference(p)
    h = interval.length
    nodes = interval.a + h * (xhat + 1.0) / 2.0
    nodes = nodes.copy()
    nodes[0], nodes[-1] = interval.a, interval.b
    weights = (h / 2.0) * what
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return LglRule(p, interval, nodes, weights)


def gauss_rule(n, interval):
    """n-point Gauss-Legendre rule on the interval (used as dense oracle)."""
    if n < 1:
        raise ValueError(f"Gauss order must be >= 1, got {n}")
    xhat, what = _gauss_reference(n)
    h = interval.length
    nodes = interval.a + h * (xhat + 1.0) / 2.0
    weights = (h / 2.0) * what
    return nodes, weights


def quadrature(rule, samples):
    """Apply the rule to function values given at its nodes."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape != rule.nodes.shape:
        raise ValueError(
            f"expected {rule.nodes.size} samples, got {samples.size}"
        )
    return float(np.dot(samples, rule.weights))


def barycentric_weights(nodes):
    """Barycentric weights of a 1D node set, normalized to unit max."""
    nodes = np.asarray(nodes, dtype=float)
    diff = np.subtract.outer(nodes, nodes)
    np.fill_diagonal(diff, 1.0)
    # normalize row products to avoid overflow at high degree
    scale = 4.0 / (nodes.max() - nodes.min())
    w = 1.0 / np.prod(diff * scale, axis=1)
    return w / np.max(np.abs(w))


def poly_eval_matrix(src_nodes, dst_points):
    """Matrix evaluating the Lagrange interpolant on src_nodes at dst_points.

    Uses the second barycentric formula; rows corresponding to dst points that
    coincide with a source node reduce to unit vectors.
    """
    src = np.asarray(src_nodes, dtype=float)
    dst = np.atleast_1d(np.asarray(dst_points, dtype=float))
    w = barycentric_weights(src)
    diff = np.subtract.outer(dst, src)
    exact = np.isclose(diff, 0.0, rtol=0.0, atol=1e-14 * max(1.0, np.max(np.abs(src))))
    diff[exact] = 1.0
    m = w[None, :] / diff
    hit_rows = np.any(exact, axis=1)
    m[hit_rows] = 0.0
    m[exact] = 1.0
    m /= np.sum(m, axis=1)[:, None]
    return m


def diff_matrix(nodes):
    """Spectral differentiation matrix: nodal values -> derivative values."""
    nodes = np.asarray(nodes, dtype=float)
    w = barycentric_weights(nodes)
    diff = np.subtract.outer(nodes, nodes)
    np.fill_diagonal(diff, 1.0)
    d = (w[None, :] / w[:, None]) / diff
    np.fill_diagonal(d, 0.0)
    np.fill_diagonal(d, -np.sum(d, axis=1))
    return d


def interpolate_polynomial(rule, samples, query_points):
    """Evaluate the unique polynomial interpolating samples at rule nodes."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape != rule.nodes.shape:
        raise ValueError(
            f"expected {rule.nodes.size} samples, got {samples.size}"
        )
    return poly_eval_matrix(rule.nodes, query_points) @ samples


def check_trace_inequality(rule, trials, rng=None):
    """Max over random polynomials of |v(e)| sqrt(H) / ((p+1) ||v||_{0,I}).

    The L2 norm is computed with a dense Gauss rule of order p+2. The returned
    ratio is bounded by 1 for every v of degree <= p.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(rng)
    p = rule.degree
    gx, gw = gauss_rule(p + 2, rule.interval)
    ev = poly_eval_matrix(rule.nodes, gx)
    h = rule.interval.length
    worst = 0.0
    for _ in range(trials):
        v = rng.standard_normal(p + 1)
        norm = np.sqrt(np.dot(gw, (ev @ v) ** 2))
        for endpoint_value in (v[0], v[-1]):
            ratio = abs(endpoint_value) * np.sqrt(h) / ((p + 1) * norm)
            worst = max(worst, ratio)
    return worst
