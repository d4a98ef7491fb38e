"""Tensor algebra tests, checked against explicit loop-based oracles."""

import numpy as np
import pytest

from fuse.tproduct import (
    RankDeficiencyWarning,
    Tensor3,
    circ,
    fold,
    read_tensor3,
    tpinv,
    tprod,
    tprod_general,
    ttranspose,
    unfold,
    write_tensor3,
)


def rand_tensor(rng, rows, cols, tubes):
    return Tensor3(rng.normal(size=(rows, cols, tubes)))


def conv_oracle(a: Tensor3, b: Tensor3) -> np.ndarray:
    """Independent t-product: explicit circular convolution of tube slices."""
    p = a.tubes
    out = np.zeros((a.rows, b.cols, p))
    for k in range(p):
        for m in range(p):
            out[:, :, k] += a.data[:, :, (k - m) % p] @ b.data[:, :, m]
    return out


class TestTensor3:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="finite"):
            Tensor3(np.full((2, 2, 2), np.nan))

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            Tensor3(np.zeros((0, 2, 2)))

    def test_immutable(self):
        t = Tensor3(np.ones((2, 2, 2)))
        with pytest.raises(ValueError):
            t.data[0, 0, 0] = 5.0

    def test_constructor_copies(self):
        raw = np.ones((2, 2, 2))
        t = Tensor3(raw)
        raw[0, 0, 0] = 7.0
        assert t.data[0, 0, 0] == 1.0


class TestCirc:
    def test_vector_columns_are_cyclic_shifts(self):
        # circ of [a0..a3]: first column the vector, second its downward shift.
        t = Tensor3(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 4))
        c = circ(t)
        assert c.shape == (4, 4)
        np.testing.assert_array_equal(c[:, 0], [1, 2, 3, 4])
        np.testing.assert_array_equal(c[:, 1], [4, 1, 2, 3])
        np.testing.assert_array_equal(c[:, 2], [3, 4, 1, 2])
        np.testing.assert_array_equal(c[:, 3], [2, 3, 4, 1])

    def test_block_structure(self):
        rng = np.random.default_rng(0)
        t = rand_tensor(rng, 2, 3, 3)
        c = circ(t)
        for p in range(3):
            for q in range(3):
                block = c[2 * p : 2 * (p + 1), 3 * q : 3 * (q + 1)]
                np.testing.assert_array_equal(block, t.slice((p - q) % 3))

    def test_single_tube_is_identity(self):
        rng = np.random.default_rng(1)
        t = rand_tensor(rng, 3, 4, 1)
        np.testing.assert_array_equal(circ(t), t.slice(0))


class TestFoldUnfold:
    def test_round_trip_exact(self):
        rng = np.random.default_rng(2)
        for rows, cols, tubes in [(1, 1, 3), (2, 2, 2), (3, 5, 4)]:
            t = rand_tensor(rng, rows, cols, tubes)
            back = fold(unfold(t), tubes)
            np.testing.assert_array_equal(back.data, t.data)

    def test_column_stacking(self):
        t = Tensor3(np.array([7.0, 8.0, 9.0]).reshape(1, 1, 3))
        np.testing.assert_array_equal(unfold(t), [[7.0], [8.0], [9.0]])

    def test_fold_rejects_indivisible_rows(self):
        with pytest.raises(ValueError, match="fold"):
            fold(np.zeros((5, 2)), 2)


class TestTprod:
    def test_identity_tensor(self):
        rng = np.random.default_rng(3)
        b = rand_tensor(rng, 3, 4, 5)
        eye = np.zeros((3, 3, 5))
        eye[:, :, 0] = np.eye(3)
        out = tprod(Tensor3(eye), b)
        np.testing.assert_allclose(out.data, b.data, atol=1e-12)

    def test_matches_convolution_oracle(self):
        rng = np.random.default_rng(4)
        a = rand_tensor(rng, 2, 2, 2)
        b = rand_tensor(rng, 2, 2, 2)
        np.testing.assert_allclose(tprod(a, b).data, conv_oracle(a, b), atol=1e-12)

    def test_matches_circulant_expansion(self):
        rng = np.random.default_rng(5)
        a = rand_tensor(rng, 2, 3, 4)
        b = rand_tensor(rng, 3, 2, 4)
        direct = fold(circ(a) @ unfold(b), 4)
        np.testing.assert_allclose(tprod(a, b).data, direct.data, atol=1e-12)

    def test_shape_contract(self):
        rng = np.random.default_rng(6)
        out = tprod(rand_tensor(rng, 2, 3, 2), rand_tensor(rng, 3, 2, 2))
        assert out.shape == (2, 2, 2)

    def test_shape_mismatch_raises(self):
        rng = np.random.default_rng(7)
        with pytest.raises(ValueError, match="inner dims"):
            tprod(rand_tensor(rng, 2, 3, 2), rand_tensor(rng, 2, 2, 2))
        with pytest.raises(ValueError, match="tube"):
            tprod(rand_tensor(rng, 2, 3, 2), rand_tensor(rng, 3, 2, 3))

    @pytest.mark.parametrize("seed", range(10))
    def test_paths_agree(self, seed):
        rng = np.random.default_rng(seed)
        a = rand_tensor(rng, 3, 4, 5)
        b = rand_tensor(rng, 4, 2, 5)
        fast = tprod(a, b, "fourier")
        slow = tprod(a, b, "circulant")
        np.testing.assert_allclose(fast.data, slow.data, atol=1e-10)

    @pytest.mark.parametrize("seed", range(10))
    def test_associative_and_distributive(self, seed):
        rng = np.random.default_rng(seed)
        a = rand_tensor(rng, 3, 4, 5)
        b = rand_tensor(rng, 4, 2, 5)
        b2 = rand_tensor(rng, 4, 2, 5)
        c = rand_tensor(rng, 2, 3, 5)
        np.testing.assert_allclose(
            tprod(a, tprod(b, c)).data, tprod(tprod(a, b), c).data, atol=1e-10
        )
        np.testing.assert_allclose(
            tprod(a, b + b2).data, (tprod(a, b) + tprod(a, b2)).data, atol=1e-10
        )


class TestTprodGeneral:
    def test_shape_law(self):
        rng = np.random.default_rng(8)
        out = tprod_general(rand_tensor(rng, 5, 3, 2), rand_tensor(rng, 3, 4, 4))
        assert out.shape == (5, 4, 4)

    def test_reduces_to_tprod_on_equal_tubes(self):
        rng = np.random.default_rng(9)
        a = rand_tensor(rng, 2, 3, 3)
        b = rand_tensor(rng, 3, 2, 3)
        np.testing.assert_allclose(
            tprod_general(a, b).data, tprod(a, b).data, atol=1e-12
        )

    def test_single_tube_operand_acts_per_slice(self):
        rng = np.random.default_rng(10)
        a = rand_tensor(rng, 2, 3, 1)
        b = rand_tensor(rng, 3, 4, 5)
        out = tprod_general(a, b)
        for k in range(5):
            np.testing.assert_allclose(
                out.slice(k), a.slice(0) @ b.slice(k), atol=1e-12
            )

    def test_matches_zero_padded_oracle(self):
        rng = np.random.default_rng(11)
        a = rand_tensor(rng, 2, 3, 2)
        b = rand_tensor(rng, 3, 2, 5)
        padded = np.zeros((2, 3, 5))
        padded[:, :, :2] = a.data
        np.testing.assert_allclose(
            tprod_general(a, b).data, conv_oracle(Tensor3(padded), b), atol=1e-12
        )

    def test_conformance_error(self):
        rng = np.random.default_rng(12)
        with pytest.raises(ValueError, match="inner dims"):
            tprod_general(rand_tensor(rng, 2, 3, 2), rand_tensor(rng, 2, 2, 4))


class TestTtranspose:
    def test_single_tube_is_matrix_transpose(self):
        rng = np.random.default_rng(13)
        t = rand_tensor(rng, 3, 4, 1)
        np.testing.assert_array_equal(ttranspose(t).slice(0), t.slice(0).T)

    def test_involution(self):
        rng = np.random.default_rng(14)
        t = rand_tensor(rng, 2, 3, 4)
        np.testing.assert_array_equal(ttranspose(ttranspose(t)).data, t.data)

    @pytest.mark.parametrize("seed", range(5))
    def test_circulant_transpose_identity(self, seed):
        rng = np.random.default_rng(seed)
        t = rand_tensor(rng, 2, 3, 4)
        np.testing.assert_allclose(circ(ttranspose(t)), circ(t).T, atol=1e-12)

    def test_symmetric_single_tube_fixed_point(self):
        m = np.array([[1.0, 2.0], [2.0, 3.0]])
        t = Tensor3.from_matrix(m)
        np.testing.assert_array_equal(ttranspose(t).data, t.data)

    def test_antihomomorphism(self):
        rng = np.random.default_rng(15)
        a = rand_tensor(rng, 2, 3, 4)
        b = rand_tensor(rng, 3, 2, 4)
        lhs = ttranspose(tprod(a, b))
        rhs = tprod(ttranspose(b), ttranspose(a))
        np.testing.assert_allclose(lhs.data, rhs.data, atol=1e-10)


class TestTpinv:
    def test_single_tube_full_row_rank_closed_form(self):
        rng = np.random.default_rng(16)
        v = rng.normal(size=(4, 9))
        closed = v.T @ np.linalg.inv(v @ v.T)
        got = tpinv(Tensor3.from_matrix(v))
        np.testing.assert_allclose(got.slice(0), closed, atol=1e-8)

    def test_penrose_condition_one(self):
        rng = np.random.default_rng(17)
        t = rand_tensor(rng, 4, 6, 3)
        p = tpinv(t)
        np.testing.assert_allclose(
            tprod(t, tprod(p, t)).data, t.data, atol=1e-8
        )

    @pytest.mark.parametrize("seed", range(10))
    def test_all_penrose_conditions(self, seed):
        rng = np.random.default_rng(seed)
        t = rand_tensor(rng, 4, 6, 3)
        p = tpinv(t)
        tp = tprod(t, p)
        pt = tprod(p, t)
        np.testing.assert_allclose(tprod(t, pt).data, t.data, atol=1e-8)
        np.testing.assert_allclose(tprod(p, tp).data, p.data, atol=1e-8)
        np.testing.assert_allclose(ttranspose(tp).data, tp.data, atol=1e-8)
        np.testing.assert_allclose(ttranspose(pt).data, pt.data, atol=1e-8)

    def test_zero_tensor(self):
        t = Tensor3(np.zeros((3, 4, 2)))
        with pytest.warns(RankDeficiencyWarning):
            p = tpinv(t)
        assert p.shape == (4, 3, 2)
        np.testing.assert_array_equal(p.data, np.zeros((4, 3, 2)))

    def test_warns_on_rank_deficiency(self):
        col = np.random.default_rng(18).normal(size=(4, 1, 2))
        t = Tensor3(np.concatenate([col, col], axis=1))
        with pytest.warns(RankDeficiencyWarning):
            tpinv(t)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(19)
        t = rand_tensor(rng, 3, 5, 4)
        path = tmp_path / "t.t3"
        write_tensor3(t, path)
        back = read_tensor3(path)
        np.testing.assert_array_equal(back.data, t.data)

    def test_write_is_deterministic(self, tmp_path):
        rng = np.random.default_rng(20)
        t = rand_tensor(rng, 2, 2, 3)
        write_tensor3(t, tmp_path / "a.t3")
        write_tensor3(t, tmp_path / "b.t3")
        assert (tmp_path / "a.t3").read_bytes() == (tmp_path / "b.t3").read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.t3"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError, match="magic"):
            read_tensor3(path)

    def test_tube_major_layout(self, tmp_path):
        # Payload order: all of tube 0 (row-major), then tube 1.
        t = Tensor3(np.arange(8.0).reshape(2, 2, 2))
        path = tmp_path / "t.t3"
        write_tensor3(t, path)
        values = np.frombuffer(path.read_bytes()[32:], dtype="<f8")
        expected = [t.data[r, c, k] for k in range(2) for r in range(2) for c in range(2)]
        np.testing.assert_array_equal(values, expected)
