"""Discrete spaces on the patch complex and the operators connecting them.

Three spaces are enumerated here: the discontinuous spectral space (per-patch
tensor LGL lattices, no coupling), its conforming subspace (interface traces
identified, Dirichlet nodes eliminated) and the conforming multilinear space
on the tensorized dyadic grids. Conforming spaces are represented by a sparse
embedding matrix E mapping global degrees of freedom to stacked per-patch
nodal values; fine-side interface nodes are slaves carrying interpolation
coefficients of the coarse-side masters.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .grids import build_nested_family, extend_family
from .lgl import build_lgl_rule, poly_eval_matrix

__all__ = [
    "SE_DG",
    "SE_CG",
    "DFE_CG",
    "Discretization",
    "DofMap",
    "build_dofmap",
    "pl_eval_matrix",
    "pl_reconstruct",
    "interp_grid_to_grid",
    "composite_K",
    "tensorize",
    "kron_apply",
    "KronOperator",
    "max_interface_jump",
    "max_boundary_trace",
]

SE_DG = "se-dg"
SE_CG = "se-cg"
DFE_CG = "dfe-cg"


class Discretization:
    """Mesh plus cached LGL rules and nested dyadic families.

    Rules and dyadic node arrays are cached per (degree, interval) so that the
    two sides of a conforming face share bitwise-identical node coordinates.
    """

    def __init__(self, mesh, alpha=1.2):
        self.mesh = mesh
        self.alpha = alpha
        self._rules = {}
        self._families = {}
        self._dyadic_nodes = {}

    def lgl_rule(self, p, interval):
        key = (p, interval.a, interval.b)
        if key not in self._rules:
            self._rules[key] = build_lgl_rule(p, interval)
        return self._rules[key]

    def patch_rules(self, pid):
        patch = self.mesh.patches[pid]
        return tuple(
            self.lgl_rule(p, iv) for p, iv in zip(patch.degrees, patch.box)
        )

    def dyadic_partition(self, p, interval):
        key = (interval.a, interval.b)
        fam = self._families.get(key)
        if fam is None:
            fam = build_nested_family(p, interval, self.alpha)
            self._families[key] = fam
        elif p not in fam.partitions:
            extend_family(fam, p)
        return fam.partitions[p]

    def dyadic_nodes(self, p, interval):
        key = (p, interval.a, interval.b)
        if key not in self._dyadic_nodes:
            pts = self.dyadic_partition(p, interval).breakpoints
            pts.setflags(write=False)
            self._dyadic_nodes[key] = pts
        return self._dyadic_nodes[key]


@dataclass
class PatchLayout:
    """Per-patch tensor lattices and their offsets in the stacked vector."""

    axes: list  # axes[pid][k] -> 1D node array
    offsets: np.ndarray
    shapes: list

    @property
    def stacked_size(self):
        return int(self.offsets[-1])

    def patch_size(self, pid):
        return int(np.prod(self.shapes[pid]))

    def patch_slice(self, pid):
        return slice(int(self.offsets[pid]), int(self.offsets[pid + 1]))

    def node_index(self, pid, multi):
        return int(self.offsets[pid]) + int(
            np.ravel_multi_index(multi, self.shapes[pid])
        )

    def lattice_coords(self, pid):
        """(n_patch, d) array of lattice node coordinates, C-order."""
        grids = np.meshgrid(*self.axes[pid], indexing="ij")
        return np.column_stack([g.ravel() for g in grids])


def _make_layout(disc, space):
    axes = []
    offsets = [0]
    shapes = []
    for patch in disc.mesh.patches:
        if space == DFE_CG:
            ax = [
                disc.dyadic_nodes(p, iv)
                for p, iv in zip(patch.degrees, patch.box)
            ]
        else:
            ax = [r.nodes for r in disc.patch_rules(patch.id)]
        axes.append(ax)
        shape = tuple(len(a) for a in ax)
        shapes.append(shape)
        offsets.append(offsets[-1] + int(np.prod(shape)))
    return PatchLayout(axes, np.array(offsets), shapes)


@dataclass
class DofMap:
    space: str
    layout: PatchLayout
    n_global: int
    embedding: sp.csr_matrix  # stacked x global
    gather: sp.csr_matrix  # global x stacked, gather @ embedding = I
    interior_global: list = field(default_factory=list)  # per patch
    interior_multi: list = field(default_factory=list)  # per patch, (n, d)
    skeleton_global: np.ndarray = None

    @property
    def n_stacked(self):
        return self.layout.stacked_size

    def to_stacked(self, x):
        return self.embedding @ x

    def from_stacked(self, xs):
        return self.gather @ xs


def _node_facet_key(patch, multi, shape):
    """Minimal facet of the patch containing lattice node ``multi``."""
    key = []
    for k, (i, n, iv) in enumerate(zip(multi, shape, patch.box)):
        if i == 0:
            key.append(("pt", iv.a))
        elif i == n - 1:
            key.append(("pt", iv.b))
        else:
            key.append(("iv", iv.a, iv.b))
    return tuple(key)


def _edge_master_nodes(disc, mesh, edge, sharp, space):
    """Full master node array on an interior edge, endpoints included."""
    t = edge.free_dirs[0]
    span = edge.span(t)
    _, qvec = sharp[edge.id]
    q = qvec[0]
    if space == SE_CG:
        return disc.lgl_rule(q, span).nodes
    return disc.dyadic_nodes(q, span)


def build_dofmap(disc, space):
    """Enumerate degrees of freedom for one of the three discrete spaces.

    Conforming spaces identify interface nodes: where the two facet grids
    coincide the identification is nodal, otherwise the finer side's facet
    values are interpolation slaves of the coarser-side masters. Boundary
    nodes are eliminated. Supported for d <= 2.
    """
    mesh = disc.mesh
    layout = _make_layout(disc, space)
    d = mesh.dim

    if space == SE_DG:
        n = layout.stacked_size
        eye = sp.identity(n, format="csr")
        return DofMap(space, layout, n, eye, eye.copy())

    if d > 2:
        raise NotImplementedError("conforming dof maps are implemented for d <= 2")

    sharp = mesh.sharp_elements()

    # global enumeration: patch interiors, then edge masters, then vertices
    interior_global, interior_multi = [], []
    n_global = 0
    for pid, shape in enumerate(layout.shapes):
        ranges = [np.arange(1, n - 1) for n in shape]
        if any(len(r) == 0 for r in ranges):
            multi = np.zeros((0, d), dtype=int)
        else:
            grids = np.meshgrid(*ranges, indexing="ij")
            multi = np.column_stack([g.ravel() for g in grids])
        ids = n_global + np.arange(len(multi))
        interior_global.append(ids)
        interior_multi.append(multi)
        n_global += len(multi)

    edge_dofs = {}
    if d == 2:
        for edge in mesh.facets_by_dim[1]:
            if edge.on_boundary:
                continue
            master = _edge_master_nodes(disc, mesh, edge, sharp, space)
            ids = n_global + np.arange(len(master) - 2)
            edge_dofs[edge.id] = ids
            n_global += len(ids)

    vertex_dofs = {}
    for v in mesh.facets_by_dim[0]:
        if v.on_boundary:
            continue
        vertex_dofs[v.id] = n_global
        n_global += 1

    skeleton = np.arange(sum(len(g) for g in interior_global), n_global)

    # embedding rows and ownership
    rows, cols, vals = [], [], []
    owner = {}

    def put(row, col, val):
        rows.append(row)
        cols.append(col)
        vals.append(val)

    for pid, patch in enumerate(mesh.patches):
        shape = layout.shapes[pid]
        axes = layout.axes[pid]
        base = int(layout.offsets[pid])

        for ids, multi in [(interior_global[pid], interior_multi[pid])]:
            for g, m in zip(ids, multi):
                r = base + int(np.ravel_multi_index(tuple(m), shape))
                put(r, g, 1.0)
                owner[g] = r

        # boundary-of-patch nodes
        for flat in range(layout.patch_size(pid)):
            multi = np.unravel_index(flat, shape)
            if all(0 < i < n - 1 for i, n in zip(multi, shape)):
                continue
            key = _node_facet_key(patch, multi, shape)
            facet = mesh.facet(key)
            row = base + flat
            if facet.on_boundary:
                continue  # eliminated
            if facet.dim == 0:
                g = vertex_dofs[facet.id]
                put(row, g, 1.0)
                owner.setdefault(g, row)
                continue
            # interior edge node, not a corner (d == 2)
            t = facet.free_dirs[0]
            master = _edge_master_nodes(disc, mesh, facet, sharp, space)
            own_nodes = axes[t]
            x = own_nodes[multi[t]]
            verts = sorted(
                mesh.sub_facets(facet, 0), key=lambda v: v.point()[t]
            )
            end_cols = []
            for v in verts:
                end_cols.append(None if v.on_boundary else vertex_dofs[v.id])
            inner = edge_dofs[facet.id]
            if len(own_nodes) == len(master) and np.array_equal(own_nodes, master):
                j = multi[t]
                put(row, inner[j - 1], 1.0)
                owner.setdefault(inner[j - 1], row)
            else:
                if space == SE_CG:
                    coeffs = poly_eval_matrix(master, [x])[0]
                else:
                    coeffs = pl_eval_matrix(master, np.array([x])).toarray()[0]
                for j, c in enumerate(coeffs):
                    if c == 0.0:
                        continue
                    if j == 0:
                        if end_cols[0] is not None:
                            put(row, end_cols[0], c)
                    elif j == len(master) - 1:
                        if end_cols[1] is not None:
                            put(row, end_cols[1], c)
                    else:
                        put(row, inner[j - 1], c)

    # owners for edge masters come from a master-degree side patch
    if d == 2:
        for edge in mesh.facets_by_dim[1]:
            if edge.on_boundary:
                continue
            spid, _ = sharp[edge.id]
            patch = mesh.patches[spid]
            t = edge.free_dirs[0]
            k = edge.frozen_dirs[0]
            shape = layout.shapes[spid]
            side = 0 if edge.key[k][1] == patch.box[k].a else shape[k] - 1
            for j, g in enumerate(edge_dofs[edge.id], start=1):
                multi = [0] * d
                multi[k] = side
                multi[t] = j
                owner.setdefault(g, layout.node_index(spid, tuple(multi)))

    embedding = sp.csr_matrix(
        (vals, (rows, cols)), shape=(layout.stacked_size, n_global)
    )
    grows = np.arange(n_global)
    gcols = np.array([owner[g] for g in grows])
    gather = sp.csr_matrix(
        (np.ones(n_global), (grows, gcols)),
        shape=(n_global, layout.stacked_size),
    )
    return DofMap(
        space,
        layout,
        n_global,
        embedding,
        gather,
        interior_global,
        interior_multi,
        skeleton,
    )


# ---------------------------------------------------------------------------
# univariate and tensorized transfer operators


def pl_eval_matrix(src_points, dst_points):
    """Sparse matrix sampling the piecewise-linear reconstruction on
    src_points at dst_points; rows sum to 1."""
    src = np.asarray(src_points, dtype=float)
    dst = np.atleast_1d(np.asarray(dst_points, dtype=float))
    if dst.min() < src[0] - 1e-12 or dst.max() > src[-1] + 1e-12:
        raise ValueError("destination points outside the source span")
    idx = np.clip(np.searchsorted(src, dst, side="right") - 1, 0, len(src) - 2)
    theta = (dst - src[idx]) / (src[idx + 1] - src[idx])
    theta = np.clip(theta, 0.0, 1.0)
    rows = np.repeat(np.arange(len(dst)), 2)
    cols = np.column_stack([idx, idx + 1]).ravel()
    vals = np.column_stack([1.0 - theta, theta]).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(dst), len(src)))


def pl_reconstruct(points, samples, query):
    """Evaluate the piecewise-linear interpolant of (points, samples)."""
    points = np.asarray(points, dtype=float)
    query = np.asarray(query, dtype=float)
    if query.min() < points[0] - 1e-12 or query.max() > points[-1] + 1e-12:
        raise ValueError("query outside the interpolation interval")
    return np.interp(query, points, np.asarray(samples, dtype=float))


def interp_grid_to_grid(src_points, dst_points, mode):
    """Nodal transfer matrix between two grids on the same interval.

    mode 'pl' samples the piecewise-linear reconstruction (sparse),
    mode 'poly' the global Lagrange interpolant (dense).
    """
    if mode == "pl":
        return pl_eval_matrix(src_points, dst_points)
    if mode == "poly":
        src = np.asarray(src_points, dtype=float)
        dst = np.asarray(dst_points, dtype=float)
        if dst.min() < src[0] - 1e-12 or dst.max() > src[-1] + 1e-12:
            raise ValueError("destination points outside the source span")
        return poly_eval_matrix(src, dst)
    raise ValueError(f"unknown transfer mode {mode!r}")


def composite_K(lgl_nodes, dyadic_nodes):
    """Nodal matrix of the composite map: piecewise-linear reconstruction on
    the LGL grid resampled at the dyadic nodes."""
    ident = pl_eval_matrix(lgl_nodes, lgl_nodes)
    return pl_eval_matrix(lgl_nodes, dyadic_nodes) @ ident


def _axis_apply(mat, x, k):
    """Apply a matrix along axis k of an ndarray (sparse or dense mat)."""
    xk = np.moveaxis(x, k, 0)
    head = xk.shape[0]
    flat = xk.reshape(head, -1)
    out = mat @ flat
    out = out.reshape((mat.shape[0],) + xk.shape[1:])
    return np.moveaxis(out, 0, k)


def kron_apply(mats, x):
    """Apply the tensor product of 1D operators to a C-order raveled vector."""
    shape_in = tuple(m.shape[1] for m in mats)
    y = np.asarray(x).reshape(shape_in)
    for k, m in enumerate(mats):
        y = _axis_apply(m, y, k)
    return y.ravel()


class KronOperator:
    """Tensor product of 1D operators applied matrix-free axis by axis."""

    def __init__(self, mats):
        self.mats = list(mats)
        self.shape = (
            int(np.prod([m.shape[0] for m in self.mats])),
            int(np.prod([m.shape[1] for m in self.mats])),
        )

    def matvec(self, x):
        x = np.asarray(x)
        if x.size != self.shape[1]:
            raise ValueError(
                f"operand size {x.size} does not match operator {self.shape}"
            )
        return kron_apply(self.mats, x)

    def rmatvec(self, y):
        y = np.asarray(y)
        if y.size != self.shape[0]:
            raise ValueError(
                f"operand size {y.size} does not match operator {self.shape}"
            )
        return kron_apply([m.T for m in self.mats], y)

    def toarray(self):
        out = np.array([[1.0]])
        for m in self.mats:
            md = m.toarray() if sp.issparse(m) else np.asarray(m)
            out = np.kron(out, md)
        return out


def tensorize(mats):
    """Tensor-product operator from per-direction matrices (matrix-free)."""
    if len(mats) == 0:
        raise ValueError("need at least one factor")
    if len(mats) == 1:
        return KronOperator(mats)
    shapes = [m.shape for m in mats]
    if any(len(s) != 2 for s in shapes):
        raise ValueError("factors must be matrices")
    return KronOperator(mats)


# ---------------------------------------------------------------------------
# interface diagnostics


def _trace_slice(layout, pid, k, side_high):
    """Stacked indices of the lattice slice on a patch face, C-order."""
    shape = layout.shapes[pid]
    idx = [np.arange(n) for n in shape]
    idx[k] = np.array([shape[k] - 1 if side_high else 0])
    grids = np.meshgrid(*idx, indexing="ij")
    flat = np.ravel_multi_index([g.ravel() for g in grids], shape)
    return int(layout.offsets[pid]) + flat


def _face_side(mesh, face, pid):
    """True if the face sits at the high end of patch pid."""
    k = face.normal_dir
    return face.key[k][1] == mesh.patches[pid].box[k].b


def max_interface_jump(disc, layout, stacked, mode, samples=64):
    """Max absolute interface jump of a stacked per-patch nodal vector.

    mode 'poly' reconstructs traces as tangential polynomials, mode 'pl' as
    piecewise-linear functions. Traces are compared at a dense set of common
    sample points including both side's nodes.
    """
    mesh = disc.mesh
    worst = 0.0
    for face in mesh.interior_faces():
        k = face.normal_dir
        traces = []
        if mesh.dim == 1:
            for pid in face.patch_ids:
                ids = _trace_slice(layout, pid, k, _face_side(mesh, face, pid))
                traces.append(stacked[ids])
            worst = max(worst, float(np.abs(traces[0] - traces[1]).max()))
            continue
        t = face.free_dirs[0]
        span = face.span(t)
        pts = np.linspace(span.a, span.b, samples)
        pts = np.unique(
            np.concatenate([pts] + [layout.axes[pid][t] for pid in face.patch_ids])
        )
        for pid in face.patch_ids:
            ids = _trace_slice(layout, pid, k, _face_side(mesh, face, pid))
            vals = stacked[ids]
            nodes = layout.axes[pid][t]
            if mode == "poly":
                tr = poly_eval_matrix(nodes, pts) @ vals
            else:
                tr = pl_eval_matrix(nodes, pts) @ vals
            traces.append(tr)
        worst = max(worst, float(np.abs(traces[0] - traces[1]).max()))
    return worst


def max_boundary_trace(disc, layout, stacked):
    """Max absolute nodal value on the domain boundary."""
    mesh = disc.mesh
    worst = 0.0
    for face in mesh.boundary_faces():
        pid = face.patch_ids[0]
        ids = _trace_slice(
            layout, pid, face.normal_dir, _face_side(mesh, face, pid)
        )
        worst = max(worst, float(np.abs(stacked[ids]).max()))
    return worst
