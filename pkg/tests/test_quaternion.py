"""Quaternion algebra and its matrix/basis representations."""

import numpy as np

from phm.quaternion import (
    Quaternion, hamilton, hamilton_diffusion_basis, hamilton_kron_basis,
    hamilton_matrix, quat_add, quat_scale, random_quaternion,
)
from phm.rng import make_rng

ONE = Quaternion(1, 0, 0, 0)
I = Quaternion(0, 1, 0, 0)
J = Quaternion(0, 0, 1, 0)
K = Quaternion(0, 0, 0, 1)


class TestAddScale:
    def test_additive_identity(self):
        q = Quaternion(1, 2, 3, 4)
        assert quat_add(q, Quaternion(0, 0, 0, 0)) == q

    def test_componentwise_sum(self):
        assert quat_add(Quaternion(1, 1, 1, 1), Quaternion(1, 1, 1, 1)) == \
            Quaternion(2, 2, 2, 2)

    def test_commutative(self):
        rng = make_rng(0)
        for _ in range(100):
            q, p = random_quaternion(rng), random_quaternion(rng)
            assert quat_add(q, p) == quat_add(p, q)

    def test_scale(self):
        q = Quaternion(1, 2, 3, 4)
        assert quat_scale(0.0, q) == Quaternion(0, 0, 0, 0)
        assert quat_scale(1.0, q) == q
        assert quat_scale(2.0, q) == Quaternion(2, 4, 6, 8)


class TestHamilton:
    def test_left_identity(self):
        p = Quaternion(5, 6, 7, 8)
        assert hamilton(ONE, p) == p

    def test_unit_rules(self):
        minus_one = Quaternion(-1, 0, 0, 0)
        for u in (I, J, K):
            assert hamilton(u, u) == minus_one
        assert hamilton(hamilton(I, J), K) == minus_one
        assert hamilton(I, J) == K
        assert hamilton(J, K) == I
        assert hamilton(K, I) == J
        assert hamilton(J, I) == Quaternion(0, 0, 0, -1)
        assert hamilton(K, J) == Quaternion(0, -1, 0, 0)
        assert hamilton(I, K) == Quaternion(0, 0, -1, 0)

    def test_hand_expanded_product(self):
        got = hamilton(Quaternion(1, 2, 3, 4), Quaternion(5, 6, 7, 8))
        assert got == Quaternion(-60, 12, 30, 24)

    def test_noncommutative_witness(self):
        assert hamilton(I, J) != hamilton(J, I)

    def test_associative_and_distributive(self):
        rng = make_rng(1)
        for _ in range(300):
            a, b, c = (random_quaternion(rng) for _ in range(3))
            assoc = hamilton(hamilton(a, b), c).as_array() - \
                hamilton(a, hamilton(b, c)).as_array()
            assert np.abs(assoc).max() <= 1e-12
            dist = hamilton(a, quat_add(b, c)).as_array() - \
                quat_add(hamilton(a, b), hamilton(a, c)).as_array()
            assert np.abs(dist).max() <= 1e-12


class TestHamiltonMatrix:
    def test_identity_quaternion_gives_identity(self):
        np.testing.assert_array_equal(hamilton_matrix(ONE), np.eye(4))

    def test_matches_product_on_random_pairs(self):
        rng = make_rng(2)
        for _ in range(1000):
            q, p = random_quaternion(rng), random_quaternion(rng)
            got = hamilton_matrix(q) @ p.as_array()
            np.testing.assert_allclose(got, hamilton(q, p).as_array(), atol=1e-12)

    def test_sign_pattern_for_pure_i(self):
        m = hamilton_matrix(I)
        expected = np.array([
            [0, -1, 0, 0],
            [1, 0, 0, 0],
            [0, 0, 0, -1],
            [0, 0, 1, 0],
        ], dtype=float)
        np.testing.assert_array_equal(m, expected)

    def test_linear_in_q(self):
        rng = make_rng(3)
        for _ in range(100):
            q, p = random_quaternion(rng), random_quaternion(rng)
            lhs = hamilton_matrix(quat_add(q, p))
            rhs = hamilton_matrix(q) + hamilton_matrix(p)
            np.testing.assert_allclose(lhs, rhs, atol=1e-12)


class TestKronBasis:
    def test_first_matrix_is_identity(self):
        np.testing.assert_array_equal(hamilton_kron_basis()[0], np.eye(4))

    def test_entries_are_signs(self):
        basis = hamilton_kron_basis()
        assert set(np.unique(basis)) <= {-1.0, 0.0, 1.0}

    def test_weighted_sum_reconstructs_matrix(self):
        rng = make_rng(4)
        basis = hamilton_kron_basis()
        for _ in range(200):
            q = random_quaternion(rng)
            combo = np.einsum("h,hij->ij", q.as_array(), basis)
            np.testing.assert_array_equal(combo, hamilton_matrix(q))

    def test_each_matrix_is_orthogonal(self):
        for mat in hamilton_kron_basis():
            np.testing.assert_array_equal(mat.T @ mat, np.eye(4))


class TestDiffusionBasis:
    def test_columns_reconstruct_matrix(self):
        rng = make_rng(5)
        basis = hamilton_diffusion_basis()
        for _ in range(200):
            q = random_quaternion(rng)
            m = np.stack([basis[col] @ q.as_array() for col in range(4)], axis=1)
            np.testing.assert_array_equal(m, hamilton_matrix(q))

    def test_relation_to_kron_basis(self):
        """Column rules are the q-th columns of the component rules:
        diffusion[q][p, m] == kron[m][p, q]."""
        kron_basis = hamilton_kron_basis()
        np.testing.assert_array_equal(
            hamilton_diffusion_basis(), np.transpose(kron_basis, (2, 1, 0)))
