"""ASM transfer operators between the three spaces.

The stage-one operator maps the discontinuous space onto its conforming
subspace by the facet recursion (vertices, then edge traces from the
minimal-degree side, then patch interiors). The stage-two operators connect
the conforming spectral and dyadic spaces through vertex-localized
interpolation chains; each per-patch, per-vertex chain is a pure tensor
product of small 1D matrices and is kept in factored form, applied
matrix-free (materialization is provided for tests and small cases).
"""

import numpy as np
import scipy.sparse as sp

from .lgl import poly_eval_matrix
from .spaces import _node_facet_key, kron_apply, pl_eval_matrix

__all__ = [
    "PatchKronOperator",
    "build_Qtilde_stage1",
    "build_Q_stage2",
    "build_Qtilde_stage2",
]


class PatchKronOperator:
    """Sum of per-patch Kronecker-factored blocks between two dof maps."""

    def __init__(self, src_dofmap, tgt_dofmap, terms):
        self.src = src_dofmap
        self.tgt = tgt_dofmap
        self.terms = terms
        self.shape = (tgt_dofmap.n_global, src_dofmap.n_global)

    def block(self, pid):
        """Dense per-patch block (target lattice x source lattice)."""
        out = None
        for mats in self.terms[pid]:
            term = np.array([[1.0]])
            for m in mats:
                term = np.kron(term, m)
            out = term if out is None else out + term
        return out

    def _apply_blocks(self, xs):
        ys = np.zeros(self.tgt.layout.stacked_size)
        for pid, patch_terms in enumerate(self.terms):
            xp = xs[self.src.layout.patch_slice(pid)]
            yp = ys[self.tgt.layout.patch_slice(pid)]
            for mats in patch_terms:
                yp += kron_apply(mats, xp)
        return ys

    def _apply_blocks_t(self, ys):
        xs = np.zeros(self.src.layout.stacked_size)
        for pid, patch_terms in enumerate(self.terms):
            yp = ys[self.tgt.layout.patch_slice(pid)]
            xp = xs[self.src.layout.patch_slice(pid)]
            for mats in patch_terms:
                xp += kron_apply([m.T for m in mats], yp)
        return xs

    def matvec(self, x):
        xs = self.src.embedding @ np.asarray(x)
        return self.tgt.gather @ self._apply_blocks(xs)

    def rmatvec(self, y):
        ys = self.tgt.gather.T @ np.asarray(y)
        return self.src.embedding.T @ self._apply_blocks_t(ys)

    def to_sparse(self):
        blocks = [sp.csr_matrix(self.block(pid)) for pid in range(len(self.terms))]
        return (
            self.tgt.gather @ sp.block_diag(blocks, format="csr") @ self.src.embedding
        ).tocsr()


# ---------------------------------------------------------------------------
# stage I: discontinuous -> conforming spectral


def _corner_multi(patch, shape, point):
    multi = []
    for k, (iv, n) in enumerate(zip(patch.box, shape)):
        multi.append(0 if point[k] == iv.a else n - 1)
    return tuple(multi)


def build_Qtilde_stage1(disc, dg_dofmap):
    """Facet-recursion projector onto the conforming subspace, as a sparse
    matrix on stacked discontinuous nodal values.

    Vertex values come from the minimal-degree incident patch (zero on the
    domain boundary); interior edge-trace values from the minimal-degree side
    interpolated in its own degree; patch-interior values are kept.
    """
    mesh = disc.mesh
    if mesh.dim > 2:
        raise NotImplementedError("stage-one projector implemented for d <= 2")
    layout = dg_dofmap.layout
    sharp = mesh.sharp_elements()
    rows, cols, vals = [], [], []

    def vertex_source(vfacet):
        """Stacked index holding the vertex value, or None on the boundary."""
        if vfacet.on_boundary:
            return None
        spid, _ = sharp[vfacet.id]
        patch = mesh.patches[spid]
        multi = _corner_multi(patch, layout.shapes[spid], vfacet.point())
        return layout.node_index(spid, multi)

    for pid, patch in enumerate(mesh.patches):
        shape = layout.shapes[pid]
        base = int(layout.offsets[pid])
        axes = layout.axes[pid]
        for flat in range(layout.patch_size(pid)):
            multi = np.unravel_index(flat, shape)
            row = base + flat
            if all(0 < i < n - 1 for i, n in zip(multi, shape)):
                rows.append(row)
                cols.append(row)
                vals.append(1.0)
                continue
            facet = mesh.facet(_node_facet_key(patch, multi, shape))
            if facet.on_boundary:
                continue
            if facet.dim == 0:
                src = vertex_source(facet)
                if src is not None:
                    rows.append(row)
                    cols.append(src)
                    vals.append(1.0)
                continue
            # interior edge node (d == 2)
            t = facet.free_dirs[0]
            k = facet.frozen_dirs[0]
            spid, qvec = sharp[facet.id]
            q = qvec[0]
            spatch = mesh.patches[spid]
            sshape = layout.shapes[spid]
            master = disc.lgl_rule(q, facet.span(t)).nodes
            side = 0 if facet.key[k][1] == spatch.box[k].a else sshape[k] - 1
            coeffs = poly_eval_matrix(master, [axes[t][multi[t]]])[0]
            verts = sorted(mesh.sub_facets(facet, 0), key=lambda v: v.point()[t])
            for j, c in enumerate(coeffs):
                if j == 0 or j == len(master) - 1:
                    src = vertex_source(verts[0 if j == 0 else 1])
                else:
                    smulti = [0, 0]
                    smulti[k] = side
                    smulti[t] = j
                    src = layout.node_index(spid, tuple(smulti))
                if src is not None:
                    rows.append(row)
                    cols.append(src)
                    vals.append(c)

    n = layout.stacked_size
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


# ---------------------------------------------------------------------------
# stage II: vertex-localized chains


def _vertex_edge_degrees(mesh, sharp, pid):
    """Per corner of the patch: reduced degree of the edge through it in
    each direction. For d=1 the 'edge' is the patch itself."""
    patch = mesh.patches[pid]
    d = patch.dim
    out = {}
    for corner in np.ndindex(*([2] * d)):
        point = tuple(
            iv.a if c == 0 else iv.b for c, iv in zip(corner, patch.box)
        )
        degs = []
        for k in range(d):
            if d == 1:
                degs.append(patch.degrees[0])
                continue
            key = []
            for l, iv in enumerate(patch.box):
                if l == k:
                    key.append(("iv", iv.a, iv.b))
                else:
                    key.append(("pt", point[l]))
            edge = mesh.facet(tuple(key))
            degs.append(sharp[edge.id][1][0])
        out[corner] = tuple(degs)
    return out


def _hat_values(interval, at_high, points):
    theta = (np.asarray(points) - interval.a) / interval.length
    return theta if at_high else 1.0 - theta


def _dyadic_subset_indices(disc, interval, p_red, p_full):
    full = disc.dyadic_partition(p_full, interval).breakpoint_fractions()
    red = disc.dyadic_partition(p_red, interval).breakpoint_fractions()
    pos = {f: i for i, f in enumerate(full)}
    return np.array([pos[f] for f in red])


def build_Q_stage2(disc, cg_dofmap, dfe_dofmap):
    """Transfer from the dyadic space to the conforming spectral space.

    Per patch and corner: localize by the multilinear hat, sample at the
    reduced-degree dyadic grid (a subgrid by nestedness), evaluate the
    piecewise-linear reconstruction at the reduced LGL grid, and extend the
    reduced-degree polynomial to the full LGL lattice.
    """
    mesh = disc.mesh
    sharp = mesh.sharp_elements()
    terms = []
    for pid, patch in enumerate(mesh.patches):
        vdegs = _vertex_edge_degrees(mesh, sharp, pid)
        patch_terms = []
        for corner, degs in vdegs.items():
            mats = []
            for k, iv in enumerate(patch.box):
                q, pfull = degs[k], patch.degrees[k]
                dq = disc.dyadic_nodes(q, iv)
                gq = disc.lgl_rule(q, iv).nodes
                gp = disc.patch_rules(pid)[k].nodes
                sel = _dyadic_subset_indices(disc, iv, q, pfull)
                chain = poly_eval_matrix(gq, gp) @ (
                    pl_eval_matrix(dq, gq).toarray()
                    * _hat_values(iv, corner[k] == 1, dq)[None, :]
                )
                m = np.zeros((len(gp), len(disc.dyadic_nodes(pfull, iv))))
                m[:, sel] = chain
                mats.append(m)
            patch_terms.append(tuple(mats))
        terms.append(patch_terms)
    return PatchKronOperator(dfe_dofmap, cg_dofmap, terms)


def build_Qtilde_stage2(disc, cg_dofmap, dfe_dofmap):
    """Transfer from the conforming spectral space to the dyadic space.

    Per patch and corner: localize by the hat, interpolate at the reduced
    LGL grid, reconstruct piecewise-linearly there, and resample at the
    reduced (hence, by nestedness, at the full) dyadic grid.
    """
    mesh = disc.mesh
    sharp = mesh.sharp_elements()
    terms = []
    for pid, patch in enumerate(mesh.patches):
        vdegs = _vertex_edge_degrees(mesh, sharp, pid)
        patch_terms = []
        for corner, degs in vdegs.items():
            mats = []
            for k, iv in enumerate(patch.box):
                q, pfull = degs[k], patch.degrees[k]
                dq = disc.dyadic_nodes(q, iv)
                dp = disc.dyadic_nodes(pfull, iv)
                gq = disc.lgl_rule(q, iv).nodes
                gp = disc.patch_rules(pid)[k].nodes
                chain = (
                    pl_eval_matrix(dq, dp).toarray()
                    @ pl_eval_matrix(gq, dq).toarray()
                    @ (
                        _hat_values(iv, corner[k] == 1, gq)[:, None]
                        * poly_eval_matrix(gp, gq)
                    )
                )
                mats.append(chain)
            patch_terms.append(tuple(mats))
        terms.append(patch_terms)
    return PatchKronOperator(cg_dofmap, dfe_dofmap, terms)
