import numpy as np
import pytest

from fetibench.decomposition import rigid_body_modes
from fetibench.errors import SingularInterior
from fetibench.fem import Material, StructuredMesh, assemble_subdomain
from fetibench.preconditioning import (LocalPreconditioner, apply_coarse_preconditioner,
                                       dirichlet_schur, lumped, super_lumped)


def square(n, rng=None):
    mesh = StructuredMesh(n, n, 1.0 / n, 1.0 / n)
    rho = np.ones(n * n) if rng is None else rng.uniform(0.1, 1, n * n)
    sd = assemble_subdomain(mesh, rho, Material())
    boundary = np.unique(np.concatenate([2 * mesh.edge_nodes(e)[:, None] + [0, 1]
                                         for e in ("left", "right", "bottom", "top")]).ravel())
    return sd.dense_stiffness(), boundary, mesh


class TestLocal:
    def test_empty_interior(self):
        k, b, _ = square(1)
        np.testing.assert_array_equal(dirichlet_schur(k, b).dense(), k)

    def test_dense_schur(self, rng):
        k, b, _ = square(3, rng)
        i = np.setdiff1d(np.arange(k.shape[0]), b)
        s = k[np.ix_(b, b)] - k[np.ix_(b, i)] @ np.linalg.solve(k[np.ix_(i, i)], k[np.ix_(i, b)])
        np.testing.assert_allclose(dirichlet_schur(k, b).dense(), s, rtol=1e-10,
                                   atol=1e-10 * np.abs(s).max())

    def test_rigid_trace(self, rng):
        k, b, mesh = square(3, rng)
        r = rigid_body_modes(mesh)[b]
        pre = dirichlet_schur(k, b)
        assert np.linalg.norm(pre.apply(r)) <= 1e-10 * np.linalg.norm(k)

    def test_lumped(self):
        k, b, _ = square(1)
        np.testing.assert_array_equal(lumped(k, b).dense(), dirichlet_schur(k, b).dense())
        k, b, _ = square(3)
        np.testing.assert_array_equal(lumped(k, b).dense(), k[np.ix_(b, b)])

    def test_lumped_needs_no_local_solve(self):
        k, b, _ = square(3)
        lp, dp = lumped(k, b), dirichlet_schur(k, b)
        v = np.ones(len(b))
        lp.apply(v)
        dp.apply(v)
        assert lp.local_solves == 0 and dp.local_solves == 1

    def test_super_lumped(self, rng):
        k, b, _ = square(3, rng)
        sl = super_lumped(k, b).dense()
        np.testing.assert_array_equal(sl, np.diag(np.diag(k[np.ix_(b, b)])))
        assert np.all(np.diag(sl) > 0)

    def test_super_lumped_single_dof(self):
        k = np.array([[2.0, -1.0], [-1.0, 2.0]])
        np.testing.assert_array_equal(super_lumped(k, [1]).dense(), lumped(k, [1]).dense())

    @pytest.mark.parametrize("kind", ["dirichlet", "lumped", "superlumped"])
    def test_symmetric_psd(self, kind, rng):
        k, b, _ = square(3, rng)
        s = LocalPreconditioner(kind, k, b).dense()
        np.testing.assert_allclose(s, s.T, atol=1e-12 * np.abs(s).max())
        assert np.linalg.eigvalsh(0.5 * (s + s.T)).min() >= -1e-10 * np.abs(s).max()

    def test_singular_interior(self):
        k = np.zeros((4, 4))
        k[0, 0] = 1.0
        with pytest.raises(SingularInterior):
            dirichlet_schur(k, [0])

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            LocalPreconditioner("exact", np.eye(2), [0])


def dense_preconditioner(system, kind, scaling):
    """``sum_s B~^s [0 0; 0 S~^s] B~^s^T`` from dense blocks (independent of the assembly)."""
    cons = system.constraints
    bt = cons.dense(system.scaling(scaling).scaled_signs(cons))
    offsets = np.cumsum([0] + cons.subdomain_dofs)
    out = np.zeros((cons.n_rows, cons.n_rows))
    for s in range(cons.n_subdomains):
        blk = bt[:, offsets[s]:offsets[s + 1]]
        if system.method == "fetidp":
            loc = system.local[s]
            blk = blk[:, loc["r"]]
            k = system.subdomains[s].dense_stiffness()[np.ix_(loc["r"], loc["r"])]
        else:
            k = system.subdomains[s].dense_stiffness()
        b = np.flatnonzero(np.any(blk != 0, axis=0))
        i = np.setdiff1d(np.arange(k.shape[0]), b)
        st = k[np.ix_(b, b)]
        if kind == "dirichlet" and len(i):
            st = st - k[np.ix_(b, i)] @ np.linalg.solve(k[np.ix_(i, i)], k[np.ix_(i, b)])
        elif kind == "superlumped":
            st = np.diag(np.diag(st))
        out += blk[:, b] @ st @ blk[:, b].T
    return out


class TestInterface:
    @pytest.mark.parametrize("method", ["tfeti", "fetidp"])
    @pytest.mark.parametrize("kind", ["dirichlet", "lumped", "superlumped"])
    def test_dense_oracle(self, desk, method, kind):
        sys = desk["grid3x3_layered"].system(method)
        for scaling in ("multiplicity", "k"):
            m = sys.preconditioner(kind, scaling).dense()
            ref = dense_preconditioner(sys, kind, scaling)
            np.testing.assert_allclose(m, ref, rtol=1e-10, atol=1e-10 * np.abs(ref).max())

    def test_single_subdomain(self):
        from fetibench.problems import laminated_beam
        from conftest import Desk
        d = Desk(laminated_beam(elems=3, n_subdomains=1, n_layers=3))
        sys = d.system("tfeti")
        ref = dense_preconditioner(sys, "dirichlet", "k")
        np.testing.assert_allclose(sys.preconditioner("dirichlet", "k").dense(), ref,
                                   rtol=1e-10, atol=1e-12)

    def test_zero_residual(self, desk):
        pre = desk["grid4x4_inclusion"].system("tfeti").preconditioner()
        z, zc = apply_coarse_preconditioner(np.zeros(pre.n_dual), pre)
        assert not z.any() and not zc.any()

    @pytest.mark.parametrize("method", ["tfeti", "fetidp"])
    def test_columns_sum(self, desk, method, rng):
        pre = desk["grid3x3_layered"].system(method).preconditioner("dirichlet", "k")
        r = rng.standard_normal(pre.n_dual)
        z, zc = apply_coarse_preconditioner(r, pre)
        assert zc.shape == (pre.n_dual, 9)
        np.testing.assert_array_equal(z, pre.apply(r))
        np.testing.assert_allclose(zc.sum(axis=1), z, rtol=1e-14, atol=1e-14 * np.abs(z).max())

    @pytest.mark.parametrize("method", ["tfeti", "fetidp"])
    def test_symmetric_psd(self, desk, method, rng):
        pre = desk["grid3x3_layered"].system(method).preconditioner("dirichlet", "k")
        a, b = rng.standard_normal((2, pre.n_dual))
        lhs, rhs = a @ pre.apply(b), b @ pre.apply(a)
        assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)
        for _ in range(5):
            r = rng.standard_normal(pre.n_dual)
            assert r @ pre.apply(r) >= 0.0
