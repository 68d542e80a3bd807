import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fetibench.decomposition import rigid_body_modes
from fetibench.errors import IncompatibleRhs, IndefiniteInput, NotPositiveDefinite
from fetibench.fem import Material, StructuredMesh, assemble_subdomain
from fetibench.linalg import (cholesky, pseudo_factorize, pseudo_solve, rank_revealing_cholesky,
                              select_fixing_dofs)


def gauss_solve(a, b):
    """Dense Gaussian elimination with partial pivoting (independent oracle)."""
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    n = len(b)
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        a[[k, p]], b[[k, p]] = a[[p, k]], b[[p, k]]
        for i in range(k + 1, n):
            f = a[i, k] / a[k, k]
            a[i, k:] -= f * a[k, k:]
            b[i] -= f * b[k]
    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        x[i] = (b[i] - a[i, i + 1:] @ x[i + 1:]) / a[i, i]
    return x


def floating_subdomain(rng, n=3):
    mesh = StructuredMesh(n, n, 1.0 / n, 1.0 / n)
    sd = assemble_subdomain(mesh, rng.uniform(0.05, 1.0, n * n), Material())
    return sd.dense_stiffness(), rigid_body_modes(mesh)


class TestCholesky:
    def test_identity(self):
        f = cholesky(np.eye(4))
        np.testing.assert_array_equal(f.solve(np.arange(1.0, 5.0)), np.arange(1.0, 5.0))

    def test_diagonal(self):
        np.testing.assert_allclose(cholesky(np.diag([4.0, 9.0])).solve([8.0, 27.0]), [2.0, 3.0])

    def test_matches_gaussian_elimination(self, rng):
        m = rng.standard_normal((20, 20))
        a = m.T @ m + np.eye(20)
        b = rng.standard_normal(20)
        np.testing.assert_allclose(cholesky(a).solve(b), gauss_solve(a, b), rtol=1e-10, atol=1e-12)

    def test_reconstruction(self, rng):
        m = rng.standard_normal((12, 12))
        a = m @ m.T + np.eye(12)
        f = cholesky(a)
        p = np.eye(12)[f.permutation]
        l = f.lower_factor
        assert np.linalg.norm(p @ a @ p.T - l @ l.T) <= 1e-12 * np.linalg.norm(a)
        assert f.kind == "definite" and f.rank == 12

    def test_residual(self, rng):
        m = rng.standard_normal((30, 30))
        a = m @ m.T + 30 * np.eye(30)
        b = rng.standard_normal(30)
        x = cholesky(a).solve(b)
        assert np.linalg.norm(a @ x - b) <= 1e-10 * np.linalg.norm(b)

    def test_not_positive_definite(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky(np.diag([1.0, -1.0]))
        with pytest.raises(NotPositiveDefinite):
            cholesky(np.ones((3, 3)))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 25), st.integers(0, 2**32 - 1))
    def test_round_trip(self, n, seed):
        r = np.random.default_rng(seed)
        m = r.standard_normal((n, n))
        a = m @ m.T + np.eye(n)
        x = r.standard_normal(n)
        np.testing.assert_allclose(cholesky(a).solve(a @ x), x, rtol=1e-9,
                                   atol=1e-9 * np.linalg.norm(x))


class TestRankRevealing:
    def test_identity(self):
        f = rank_revealing_cholesky(np.eye(3))
        assert f.rank == 3
        np.testing.assert_array_equal(f.permutation, [0, 1, 2])
        np.testing.assert_array_equal(f.leading_block, np.eye(3))

    def test_rank_one_outer_product(self):
        v = np.array([1.0, 2.0, 2.0])
        f = rank_revealing_cholesky(np.outer(v, v))
        assert f.rank == 1
        assert f.permutation[0] == 1  # first of the two largest diagonals (4)
        assert f.leading_block[0, 0] == pytest.approx(2.0)

    def test_duplicated_columns(self, rng):
        m = rng.standard_normal((8, 8))
        fmat = m @ m.T + np.eye(8)
        w = rng.standard_normal(8)
        ww = np.column_stack([w, w])
        delta = ww.T @ fmat @ ww
        f = rank_revealing_cholesky(delta)
        assert f.rank == 1
        vals, vecs = np.linalg.eigh(delta)
        rank1 = vals[-1] * np.outer(vecs[:, -1], vecs[:, -1])
        l = np.zeros((2, 2))
        l[:, :1] = f.lower_factor
        p = np.eye(2)[f.permutation]
        np.testing.assert_allclose(p.T @ l @ l.T @ p, rank1, rtol=1e-10, atol=1e-10)

    def test_leading_block_structure(self, rng):
        q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        a = q.T @ np.diag([5.0, 3.0, 2.0, 0.0, 0.0, 0.0]) @ q
        f = rank_revealing_cholesky(a)
        assert f.rank == 3
        assert f.lower_factor.shape == (6, 3)
        assert np.allclose(np.triu(f.leading_block, 1), 0.0)
        d = np.diag(a)[f.permutation]
        assert d[0] == pytest.approx(np.max(np.diag(a)))

    def test_indefinite(self):
        with pytest.raises(IndefiniteInput):
            rank_revealing_cholesky(np.diag([1.0, -0.5]))

    def test_zero_matrix(self):
        assert rank_revealing_cholesky(np.zeros((4, 4))).rank == 0

    @settings(max_examples=60, deadline=None)
    @given(st.data())
    def test_exact_rank(self, data):
        n = data.draw(st.integers(1, 30))
        r = data.draw(st.integers(1, n))
        seed = data.draw(st.integers(0, 2**32 - 1))
        g = np.random.default_rng(seed)
        q, _ = np.linalg.qr(g.standard_normal((n, n)))
        d = np.zeros(n)
        d[:r] = g.uniform(1.0, 10.0, r)
        a = q.T @ np.diag(d) @ q
        a = 0.5 * (a + a.T)
        assert rank_revealing_cholesky(a, pivot_tol=1e-10).rank == r


class TestPseudoInverse:
    def test_zero_rhs(self, rng):
        k, r = floating_subdomain(rng)
        x = pseudo_solve(pseudo_factorize(k, r), np.zeros(k.shape[0]))
        np.testing.assert_array_equal(x, 0.0)

    def test_round_trip(self, rng):
        k, r = floating_subdomain(rng)
        f = pseudo_factorize(k, r)
        y = rng.standard_normal(k.shape[0])
        x = pseudo_solve(f, k @ y)
        assert np.linalg.norm(k @ x - k @ y) <= 1e-10 * np.linalg.norm(k @ y)
        np.testing.assert_array_equal(x[f.fixed_dofs], 0.0)
        # x and y differ by a rigid-body mode
        diff = x - y
        coef, *_ = np.linalg.lstsq(r, diff, rcond=None)
        assert np.linalg.norm(r @ coef - diff) <= 1e-8 * np.linalg.norm(diff)

    def test_nullspace_rhs_rejected(self, rng):
        k, r = floating_subdomain(rng)
        with pytest.raises(IncompatibleRhs):
            pseudo_solve(pseudo_factorize(k, r), r[:, 2])

    def test_rank(self, rng):
        k, r = floating_subdomain(rng)
        f = pseudo_factorize(k, r)
        assert f.kind == "semidefinite"
        assert f.dimension - f.rank == 3
        assert len(f.fixed_dofs) == 3

    def test_fixing_block_well_conditioned(self, rng):
        _, r = floating_subdomain(rng, 4)
        fixed = select_fixing_dofs(r)
        assert abs(np.linalg.det(r[fixed])) > 1e-3

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 4))
    def test_generalized_inverse(self, seed, n):
        g = np.random.default_rng(seed)
        k, r = floating_subdomain(g, n)
        f = pseudo_factorize(k, r)
        y = g.standard_normal(k.shape[0])
        ky = k @ y
        assert np.linalg.norm(k @ pseudo_solve(f, ky) - ky) <= 1e-9 * max(np.linalg.norm(ky), 1e-300)
