import numpy as np
import pytest
import scipy.linalg as sla

from sedg.assembly import (
    assemble_b2,
    assemble_conforming,
    classify_anisotropy,
    _b2_patch,
)
from sedg.mesh import build_mesh
from sedg.spaces import (
    DFE_CG,
    SE_CG,
    SE_DG,
    Discretization,
    build_dofmap,
    kron_apply,
    max_boundary_trace,
    max_interface_jump,
    pl_eval_matrix,
)
from sedg.transfer import (
    build_Q_stage2,
    build_Qtilde_stage1,
    build_Qtilde_stage2,
)


def make_disc(boxes, degrees, alpha=1.2):
    return Discretization(build_mesh(boxes, degrees), alpha=alpha)


def spaces(disc):
    return (
        build_dofmap(disc, SE_DG),
        build_dofmap(disc, SE_CG),
        build_dofmap(disc, DFE_CG),
    )


# ---------------------------------------------------------------------------
# stage I


def test_qtilde1_identity_on_conforming(disc_2patch_48):
    disc = disc_2patch_48
    dg, cg, _ = spaces(disc)
    qt = build_Qtilde_stage1(disc, dg)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(cg.n_global)
    xs = cg.embedding @ x
    assert np.abs(qt @ xs - xs).max() < 1e-12


def test_qtilde1_ones_vector():
    disc = make_disc([((0, 1), (0, 1)), ((1, 2), (0, 1))], [(3, 3), (3, 3)])
    dg, _, _ = spaces(disc)
    qt = build_Qtilde_stage1(disc, dg)
    out = qt @ np.ones(dg.n_stacked)
    assert max_boundary_trace(disc, dg.layout, out) == 0.0
    # every node off the domain boundary keeps the value 1
    for pid in range(2):
        coords = dg.layout.lattice_coords(pid)
        vals = out[dg.layout.patch_slice(pid)]
        onb = (
            np.isclose(coords[:, 0], 0.0)
            | np.isclose(coords[:, 0], 2.0)
            | np.isclose(coords[:, 1], 0.0)
            | np.isclose(coords[:, 1], 1.0)
        )
        assert np.abs(vals[~onb] - 1.0).max() < 1e-13
        assert np.abs(vals[onb]).max() == 0.0


def test_qtilde1_two_patch_hand_trace(disc_2patch_48):
    # coarse side zero: the shared trace comes from the minimal-degree side
    # and vanishes; fine-patch interior values stay untouched
    disc = disc_2patch_48
    dg, _, _ = spaces(disc)
    qt = build_Qtilde_stage1(disc, dg)
    rng = np.random.default_rng(1)
    v = np.zeros(dg.n_stacked)
    fine = dg.layout.patch_slice(1)
    v[fine] = rng.standard_normal(81)
    out = qt @ v
    assert np.abs(out[dg.layout.patch_slice(0)]).max() == 0.0
    shape = dg.layout.shapes[1]
    vals = out[fine].reshape(shape)
    orig = v[fine].reshape(shape)
    # interior nodes unchanged
    assert np.array_equal(vals[1:-1, 1:-1], orig[1:-1, 1:-1])
    # trace on the shared face (x = 1, low end of patch 1) zeroed
    assert np.abs(vals[0, :]).max() == 0.0


def test_qtilde1_outputs_conforming():
    disc = make_disc(
        [((i, i + 1.0), (j, j + 1.0)) for i in range(2) for j in range(2)],
        [(3, 3), (4, 4), (5, 5), (4, 4)],
    )
    dg, _, _ = spaces(disc)
    qt = build_Qtilde_stage1(disc, dg)
    rng = np.random.default_rng(2)
    for _ in range(5):
        out = qt @ rng.standard_normal(dg.n_stacked)
        assert max_interface_jump(disc, dg.layout, out, "poly") < 1e-12
        assert max_boundary_trace(disc, dg.layout, out) == 0.0


# ---------------------------------------------------------------------------
# stage II


def test_q_preserves_constants_blockwise(disc_2patch_48):
    disc = disc_2patch_48
    _, cg, dfe = spaces(disc)
    q = build_Q_stage2(disc, cg, dfe)
    qt = build_Qtilde_stage2(disc, cg, dfe)
    for pid in range(2):
        bq = q.block(pid)
        assert np.abs(bq @ np.ones(bq.shape[1]) - 1.0).max() < 1e-13
        bqt = qt.block(pid)
        assert np.abs(bqt @ np.ones(bqt.shape[1]) - 1.0).max() < 1e-13


def test_q_columns_jump_free():
    disc = make_disc(
        [((0, 1), (0, 1)), ((1, 2), (0, 1)), ((0, 1), (1, 2)), ((1, 2), (1, 2))],
        [(3, 3), (6, 6), (6, 6), (3, 3)],
    )
    _, cg, dfe = spaces(disc)
    q = build_Q_stage2(disc, cg, dfe)
    qt = build_Qtilde_stage2(disc, cg, dfe)
    rng = np.random.default_rng(3)
    for _ in range(5):
        ys = q._apply_blocks(dfe.embedding @ rng.standard_normal(dfe.n_global))
        assert max_interface_jump(disc, cg.layout, ys, "poly") < 1e-12
        ws = qt._apply_blocks(cg.embedding @ rng.standard_normal(cg.n_global))
        assert max_interface_jump(disc, dfe.layout, ws, "pl") < 1e-12
    # unit columns too
    qs = q.to_sparse()
    for j in range(0, dfe.n_global, max(1, dfe.n_global // 17)):
        e = np.zeros(dfe.n_global)
        e[j] = 1.0
        ys = q._apply_blocks(dfe.embedding @ e)
        assert max_interface_jump(disc, cg.layout, ys, "poly") < 1e-12
    assert qs.shape == (cg.n_global, dfe.n_global)


def test_edge_identity_uniform_degrees():
    # with equal degrees the dyadic intermediate reproduces the trace on
    # every edge
    disc = make_disc([((0, 1), (0, 1)), ((1, 2), (0, 1))], [(6, 6), (6, 6)])
    _, cg, dfe = spaces(disc)
    rng = np.random.default_rng(5)
    for pid in range(2):
        axes = dfe.layout.axes[pid]
        n1, n2 = len(axes[0]), len(axes[1])
        v = rng.standard_normal(n1 * n2).reshape(n1, n2)
        # intermediate = sum_z multilinear-hat localization sampled at the
        # (here: full) dyadic lattice; pointwise the hats sum to one
        iv0 = disc.mesh.patches[pid].box[0]
        iv1 = disc.mesh.patches[pid].box[1]
        t0 = (axes[0] - iv0.a) / iv0.length
        t1 = (axes[1] - iv1.a) / iv1.length
        inter = np.zeros_like(v)
        for c0 in (0, 1):
            for c1 in (0, 1):
                h0 = t0 if c0 else 1 - t0
                h1 = t1 if c1 else 1 - t1
                inter += np.outer(h0, h1) * v
        assert np.abs(inter[0, :] - v[0, :]).max() < 1e-12
        assert np.abs(inter[-1, :] - v[-1, :]).max() < 1e-12


def test_q_block_dense_chain_oracle():
    # independent evaluation of the per-vertex chain on a single patch
    disc = make_disc([((0, 1), (0, 2))], [(4, 6)])
    _, cg, dfe = spaces(disc)
    q = build_Q_stage2(disc, cg, dfe)
    patch = disc.mesh.patches[0]
    dn = [dfe.layout.axes[0][k] for k in range(2)]
    gp = [cg.layout.axes[0][k] for k in range(2)]
    rng = np.random.default_rng(7)
    v = rng.standard_normal(len(dn[0]) * len(dn[1])).reshape(len(dn[0]), len(dn[1]))

    def pl2(nodes0, nodes1, vals, x0, x1):
        tmp = np.array([np.interp(x0, nodes0, vals[:, j]) for j in range(vals.shape[1])]).T
        return np.array([np.interp(x1, nodes1, row) for row in tmp])

    def polyfit_eval(nodes, vals, x):
        c = np.linalg.solve(np.vander(nodes, len(nodes), increasing=True), vals)
        return np.polynomial.polynomial.polyval(x, c)

    want = np.zeros((len(gp[0]), len(gp[1])))
    sharp = disc.mesh.sharp_elements()
    from sedg.transfer import _vertex_edge_degrees

    vdegs = _vertex_edge_degrees(disc.mesh, sharp, 0)
    for corner, degs in vdegs.items():
        dq = [disc.dyadic_nodes(degs[k], patch.box[k]) for k in range(2)]
        gq = [disc.lgl_rule(degs[k], patch.box[k]).nodes for k in range(2)]
        # localize and sample at the reduced dyadic lattice
        loc = np.zeros((len(dq[0]), len(dq[1])))
        for i, x in enumerate(dq[0]):
            t0 = (x - patch.box[0].a) / patch.box[0].length
            h0 = t0 if corner[0] else 1 - t0
            for j, y in enumerate(dq[1]):
                t1 = (y - patch.box[1].a) / patch.box[1].length
                h1 = t1 if corner[1] else 1 - t1
                loc[i, j] = h0 * h1 * pl2(dn[0], dn[1], v, [x], [y])[0][0]
        # piecewise-linear at the reduced LGL lattice
        at_gq = pl2(dq[0], dq[1], loc, gq[0], gq[1])
        # polynomial extension to the full LGL lattice, axis by axis
        tmp = np.array([polyfit_eval(gq[0], at_gq[:, j], gp[0]) for j in range(at_gq.shape[1])]).T
        ext = np.array([polyfit_eval(gq[1], row, gp[1]) for row in tmp])
        want += ext
    got = (q.block(0) @ v.ravel()).reshape(len(gp[0]), len(gp[1]))
    assert np.abs(got - want).max() < 1e-12 * max(1.0, np.abs(want).max())


def test_qtilde2_block_dense_chain_oracle(disc_2patch_48):
    disc = disc_2patch_48
    _, cg, dfe = spaces(disc)
    qt = build_Qtilde_stage2(disc, cg, dfe)
    rng = np.random.default_rng(11)
    from sedg.transfer import _vertex_edge_degrees

    sharp = disc.mesh.sharp_elements()
    for pid in range(2):
        patch = disc.mesh.patches[pid]
        gp = [cg.layout.axes[pid][k] for k in range(2)]
        dp = [dfe.layout.axes[pid][k] for k in range(2)]
        v = rng.standard_normal(len(gp[0]) * len(gp[1])).reshape(len(gp[0]), len(gp[1]))

        def polyfit_eval(nodes, vals, x):
            # scaled-domain fit keeps the oracle well conditioned at p=8
            f = np.polynomial.Polynomial.fit(nodes, vals, deg=len(nodes) - 1)
            return f(np.asarray(x))

        want = np.zeros((len(dp[0]), len(dp[1])))
        for corner, degs in _vertex_edge_degrees(disc.mesh, sharp, pid).items():
            dq = [disc.dyadic_nodes(degs[k], patch.box[k]) for k in range(2)]
            gq = [disc.lgl_rule(degs[k], patch.box[k]).nodes for k in range(2)]
            # localized polynomial of reduced degree: sample Phi_z * v at gq
            at_gq = np.zeros((len(gq[0]), len(gq[1])))
            tmp = np.array([polyfit_eval(gp[0], v[:, j], gq[0]) for j in range(v.shape[1])]).T
            vred = np.array([polyfit_eval(gp[1], row, gq[1]) for row in tmp])
            for i, x in enumerate(gq[0]):
                t0 = (x - patch.box[0].a) / patch.box[0].length
                h0 = t0 if corner[0] else 1 - t0
                for j, y in enumerate(gq[1]):
                    t1 = (y - patch.box[1].a) / patch.box[1].length
                    h1 = t1 if corner[1] else 1 - t1
                    at_gq[i, j] = h0 * h1 * vred[i, j]
            # piecewise-linear resampling at reduced then full dyadic grids
            tmp2 = np.array([np.interp(dq[0], gq[0], at_gq[:, j]) for j in range(at_gq.shape[1])]).T
            at_dq = np.array([np.interp(dq[1], gq[1], row) for row in tmp2])
            tmp3 = np.array([np.interp(dp[0], dq[0], at_dq[:, j]) for j in range(at_dq.shape[1])]).T
            full = np.array([np.interp(dp[1], dq[1], row) for row in tmp3])
            want += full
        got = (qt.block(pid) @ v.ravel()).reshape(len(dp[0]), len(dp[1]))
        assert np.abs(got - want).max() < 1e-12 * max(1.0, np.abs(want).max())


def test_transfer_adjoint_and_sparse_consistency(disc_2patch_48):
    disc = disc_2patch_48
    _, cg, dfe = spaces(disc)
    q = build_Q_stage2(disc, cg, dfe)
    rng = np.random.default_rng(13)
    x = rng.standard_normal(dfe.n_global)
    y = rng.standard_normal(cg.n_global)
    assert abs(y @ q.matvec(x) - x @ q.rmatvec(y)) < 1e-12 * (
        1 + abs(y @ q.matvec(x))
    )
    qs = q.to_sparse()
    assert np.abs(qs @ x - q.matvec(x)).max() < 1e-12


def test_transfer_locality():
    disc = make_disc(
        [((i, i + 1.0), (j, j + 1.0)) for i in range(3) for j in range(3)],
        [(3, 3)] * 9,
    )
    _, cg, dfe = spaces(disc)
    q = build_Q_stage2(disc, cg, dfe).to_sparse().tocsr()

    def patches_of_cg_dof(g):
        out = set()
        for pid in range(9):
            sl = cg.layout.patch_slice(pid)
            col = cg.embedding[sl.start : sl.stop, g]
            if col.nnz:
                out.add(pid)
        return out

    def patches_of_dfe_dof(g):
        out = set()
        for pid in range(9):
            sl = dfe.layout.patch_slice(pid)
            if dfe.embedding[sl.start : sl.stop, g].nnz:
                out.add(pid)
        return out

    neighbors = {
        pid: {
            q2
            for f in disc.mesh.facets
            if pid in f.patch_ids
            for q2 in f.patch_ids
        }
        for pid in range(9)
    }
    for row in range(0, cg.n_global, 31):
        cols = q[row].indices
        row_patches = patches_of_cg_dof(row)
        allowed = set()
        for p in row_patches:
            allowed |= neighbors[p]
        for c in cols:
            assert patches_of_dfe_dof(c) & allowed


def test_stage2_boundedness_surrogates():
    # Ritz bands for a(Q., Q.) vs atilde and b((I - Qtilde)., .) vs a
    worst_q, worst_jt = 0.0, 0.0
    for p in (4, 8, 16):
        disc = make_disc(
            [((0, 1), (0, 1)), ((1, 2), (0, 1))], [(p, p), (2 * p, 2 * p)]
        )
        _, cg, dfe = spaces(disc)
        at1 = assemble_conforming(disc, cg).toarray()
        at2 = assemble_conforming(disc, dfe).toarray()
        q = build_Q_stage2(disc, cg, dfe).to_sparse().toarray()
        pencil = sla.eigvalsh(q.T @ at1 @ q, at2)
        worst_q = max(worst_q, pencil.max())
        # b(v - Qtilde v) against a(v, v): evaluate the smoother form on the
        # multilinear surrogate nodal values of v - Qtilde v
        qt = build_Qtilde_stage2(disc, cg, dfe)
        cls = classify_anisotropy(disc, 2.0)
        blocks = [
            _b2_patch(disc, cg.layout, pid, cls, 0.6) for pid in range(2)
        ]
        import scipy.sparse as sp

        bloc = sp.block_diag(blocks, format="csr")
        # nodal values of Qtilde v at the LGL lattice, patch by patch
        rows = []
        for pid in range(2):
            pl = [
                pl_eval_matrix(dfe.layout.axes[pid][k], cg.layout.axes[pid][k])
                for k in range(2)
            ]
            rows.append(sp.kron(pl[0], pl[1], format="csr"))
        pl_all = sp.block_diag(rows, format="csr")
        jmat = cg.embedding - pl_all @ dfe.embedding @ qt.to_sparse()
        bj = (jmat.T @ bloc @ jmat).toarray()
        pencil2 = sla.eigvalsh(bj, at1)
        worst_jt = max(worst_jt, pencil2.max())
    assert worst_q < 10.0  # observed ~2
    assert worst_jt < 10.0  # observed ~2
