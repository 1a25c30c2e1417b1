"""Shared fixtures and independent oracle implementations.

The oracles deliberately avoid the production code paths: polynomial
evaluation and differentiation go through Vandermonde solves and coefficient
arrays (numpy.polynomial), piecewise-linear evaluation through np.interp,
and assembly through explicit loops.
"""

import numpy as np
import numpy.polynomial.polynomial as npoly
import pytest

from sedg.lgl import Interval, build_lgl_rule
from sedg.mesh import build_mesh
from sedg.spaces import SE_DG, Discretization, build_dofmap


def lagrange_coefficients(nodes):
    """Coefficient arrays of the Lagrange basis via a Vandermonde solve."""
    n = len(nodes)
    v = np.vander(nodes, n, increasing=True)
    return np.linalg.solve(v, np.eye(n))  # column j = coeffs of phi_j


def poly_interp_oracle(nodes, samples, x):
    """Independent polynomial interpolation via Vandermonde solve."""
    c = np.linalg.solve(np.vander(nodes, len(nodes), increasing=True), samples)
    return npoly.polyval(np.asarray(x, dtype=float), c)


def monomial_integral(k, a, b):
    return (b ** (k + 1) - a ** (k + 1)) / (k + 1)


@pytest.fixture(scope="session")
def mesh_3x3_p4():
    boxes = [((i, i + 1.0), (j, j + 1.0)) for i in range(3) for j in range(3)]
    return build_mesh(boxes, [(4, 4)] * 9)


@pytest.fixture(scope="session")
def disc_3x3_p4(mesh_3x3_p4):
    return Discretization(mesh_3x3_p4, alpha=1.2)


@pytest.fixture(scope="session")
def mesh_2patch_48():
    boxes = [((0.0, 1.0), (0.0, 1.0)), ((1.0, 2.0), (0.0, 1.0))]
    return build_mesh(boxes, [(4, 4), (8, 8)])


@pytest.fixture(scope="session")
def disc_2patch_48(mesh_2patch_48):
    return Discretization(mesh_2patch_48, alpha=1.2)


# ---------------------------------------------------------------------------
# dense, loop-based oracle for the DG-NI bilinear form


class _PatchBasis:
    """Tensor Lagrange basis of one patch, via coefficient arrays."""

    def __init__(self, rules):
        self.rules = rules
        self.coeffs = [lagrange_coefficients(r.nodes) for r in rules]
        self.shape = tuple(r.degree + 1 for r in rules)

    def value(self, flat, point):
        multi = np.unravel_index(flat, self.shape)
        out = 1.0
        for c, i, x in zip(self.coeffs, multi, point):
            out *= npoly.polyval(x, c[:, i])
        return out

    def partial(self, flat, k, point):
        multi = np.unravel_index(flat, self.shape)
        out = 1.0
        for l, (c, i, x) in enumerate(zip(self.coeffs, multi, point)):
            ck = npoly.polyder(c[:, i]) if l == k else c[:, i]
            out *= npoly.polyval(x, ck)
        return out


def dense_dg_oracle(disc, gamma):
    """Entrywise DG-NI matrix assembled by explicit nodal-quadrature loops.

    Shares only the LGL node/weight values with production (those are pinned
    by their own tests); all evaluation, differentiation and accumulation is
    independent.
    """
    mesh = disc.mesh
    d = mesh.dim
    bases = [_PatchBasis(disc.patch_rules(pid)) for pid in range(len(mesh.patches))]
    sizes = [int(np.prod(b.shape)) for b in bases]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    n = offs[-1]
    a = np.zeros((n, n))

    for pid, basis in enumerate(bases):
        rules = basis.rules
        pts = [r.nodes for r in rules]
        wts = [r.weights for r in rules]
        for qidx in np.ndindex(*basis.shape):
            point = [pts[k][qidx[k]] for k in range(d)]
            w = np.prod([wts[k][qidx[k]] for k in range(d)])
            for i in range(sizes[pid]):
                gi = [basis.partial(i, k, point) for k in range(d)]
                if not any(gi):
                    continue
                for j in range(sizes[pid]):
                    gj = [basis.partial(j, k, point) for k in range(d)]
                    a[offs[pid] + i, offs[pid] + j] += w * float(
                        np.dot(gi, gj)
                    )

    for face in mesh.faces():
        k = face.normal_dir
        omega = mesh.face_weight(face)
        frules = [
            build_lgl_rule(
                max(mesh.patches[q].degrees[t] for q in face.patch_ids),
                face.span(t),
            )
            for t in face.free_dirs
        ]
        qpts = [()] if d == 1 else [(x,) for x in frules[0].nodes]
        qwts = [1.0] if d == 1 else list(frules[0].weights)
        coord = face.key[k][1]
        if face.on_boundary:
            pid = face.patch_ids[0]
            sign = 1.0 if coord == mesh.patches[pid].box[k].b else -1.0
            sides = [(pid, 1.0, sign)]
        else:
            lo = [
                q
                for q in face.patch_ids
                if coord == mesh.patches[q].box[k].b
            ]
            hi = [q for q in face.patch_ids if q not in lo]
            sides = [(lo[0], 1.0, 0.5), (hi[0], -1.0, 0.5)]

        def full_point(tang):
            pt = list(tang)
            pt.insert(k, coord)
            return pt

        for tang, w in zip(qpts, qwts):
            pt = full_point(tang)
            for pr, jr, ar in sides:
                for pc, jc, ac in sides:
                    br, bc = bases[pr], bases[pc]
                    for i in range(sizes[pr]):
                        vi = br.value(i, pt)
                        di = br.partial(i, k, pt)
                        for j in range(sizes[pc]):
                            vj = bc.value(j, pt)
                            dj = bc.partial(j, k, pt)
                            a[offs[pr] + i, offs[pc] + j] += w * (
                                -ar * di * jc * vj
                                - jr * vi * ac * dj
                                + gamma * omega * jr * vi * jc * vj
                            )
    return a


@pytest.fixture(scope="session")
def dg_dofmap_2patch(disc_2patch_48):
    return build_dofmap(disc_2patch_48, SE_DG)


def l2_norm_gauss(rule, values_at, order=None):
    """Dense-Gauss L2 norm of a function given as a callable."""
    from sedg.lgl import gauss_rule

    n = order or rule.degree + 2
    gx, gw = gauss_rule(n, rule.interval)
    vals = values_at(gx)
    return float(np.sqrt(np.dot(gw, vals**2)))


def make_interval_mesh(points, degrees):
    """1D multipatch mesh from breakpoints."""
    boxes = [((points[i], points[i + 1]),) for i in range(len(points) - 1)]
    return build_mesh(boxes, [(p,) for p in degrees])
