import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from viscofrac.material import (MaterialModel, Region, TensorField, apply_tensor,
                                check_tensor_class, default_samples, isotropic_tensor,
                                make_isotropic, voigt_matrix)


def random_symmetric(rng, n):
    A = rng.normal(size=(n, 2, 2))
    return 0.5 * (A + np.swapaxes(A, 1, 2))


class TestMakeIsotropic:
    def test_identity_maps_to_twice_identity(self):
        field = make_isotropic(0.0, 1.0)
        np.testing.assert_allclose(field(np.zeros(2), np.eye(2)), 2 * np.eye(2), atol=1e-15)

    def test_antisymmetric_input_gives_zero(self):
        field = make_isotropic(0.0, 1.0)
        W = np.array([[0.0, 1.3], [-1.3, 0.0]])
        np.testing.assert_allclose(field(np.zeros(2), W), 0.0, atol=1e-15)

    def test_window_matches_rayleigh_quotients(self):
        # brute-force min/max of (T A : A) / |A|^2 over random symmetric A
        field = make_isotropic(2.0, 1.0)
        rng = np.random.default_rng(1)
        A = random_symmetric(rng, 10_000)
        q = np.einsum("nij,nij->n", apply_tensor(field.base, A), A) / np.einsum("nij,nij->n", A, A)
        lo, hi = field.window
        assert (lo, hi) == (2.0, 6.0)
        assert q.min() >= lo - 1e-12 and q.max() <= hi + 1e-12
        assert q.min() < lo + 1e-2 and q.max() > hi - 1e-2

    def test_window_matches_voigt_eigenvalues(self):
        # the quadratic form on symmetric matrices has extreme ratios at
        # eigenvalues of the Voigt matrix in the orthonormal basis (e11, e22, sqrt2 e12)
        T = isotropic_tensor(2.0, 1.0)
        V = voigt_matrix(T)
        S = np.diag([1.0, 1.0, np.sqrt(2.0)])
        ev = np.linalg.eigvalsh(S @ V @ S)
        assert ev.min() == pytest.approx(2.0) and ev.max() == pytest.approx(6.0)

    @pytest.mark.parametrize("mu", [0.0, -1.0])
    def test_nonpositive_shear_modulus_rejected(self, mu):
        with pytest.raises(ValueError):
            make_isotropic(1.0, mu)

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            make_isotropic(-0.5, 1.0)


class TestCheckTensorClass:
    def test_scaled_symmetrization_passes_with_equal_bounds(self):
        scale = 3.7

        def field(x, A):
            return scale * 0.5 * (A + A.T)

        pts, mats = default_samples()
        rep = check_tensor_class(field, scale, scale, pts, mats)
        assert rep.passed and rep.worst_violation == 0.0

    def test_non_symmetric_output_flags_symmetry(self):
        def field(x, A):
            return A + np.array([[0.0, 1.0], [0.0, 0.0]]) * A[0, 0]

        pts, mats = default_samples(4, 16)
        rep = check_tensor_class(field, 0.1, 10.0, pts, mats)
        assert not rep.passed
        assert "symmetry" in rep.failed_properties

    def test_isotropic_window_pass_and_fail(self):
        field = make_isotropic(2.0, 1.0)
        pts, mats = default_samples()
        assert check_tensor_class(field, 2.0, 6.0, pts, mats).passed
        rep = check_tensor_class(field, 2.1, 6.0, pts, mats)
        assert not rep.passed and rep.failed_properties == ["lower_bound"]

    def test_empty_samples_rejected(self):
        with pytest.raises(ValueError):
            check_tensor_class(make_isotropic(1.0, 1.0), 2.0, 4.0, np.zeros((0, 2)), np.eye(2))

    @settings(max_examples=30, deadline=None)
    @given(lam=st.floats(0.0, 50.0), mu=st.floats(1e-3, 50.0), seed=st.integers(0, 2**16))
    def test_isotropic_always_in_its_window(self, lam, mu, seed):
        pts, mats = default_samples(4, 32, seed=seed)
        rep = check_tensor_class(make_isotropic(lam, mu), 2 * mu, 2 * mu + 2 * lam, pts, mats)
        assert rep.passed

    @settings(max_examples=30, deadline=None)
    @given(lam=st.floats(0.0, 10.0), mu=st.floats(0.1, 10.0), seed=st.integers(0, 2**16))
    def test_quadratic_form_sees_only_symmetric_part(self, lam, mu, seed):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(8, 2, 2))
        A_sym = 0.5 * (A + np.swapaxes(A, 1, 2))
        T = isotropic_tensor(lam, mu)
        q = np.einsum("nij,nij->n", apply_tensor(T, A), A)
        q_sym = np.einsum("nij,nij->n", apply_tensor(T, A_sym), A_sym)
        np.testing.assert_allclose(q, q_sym, rtol=1e-12, atol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(params=st.tuples(st.floats(0.0, 3.0), st.floats(0.5, 3.0), st.floats(0.0, 3.0),
                            st.floats(0.5, 3.0)))
    def test_sum_satisfies_doubled_window(self, params):
        lc, mc, lv, mv = params
        C, V = make_isotropic(lc, mc), make_isotropic(lv, mv, kind="viscous")
        lam = min(C.window[0], V.window[0])
        Lam = max(C.window[1], V.window[1])
        pts, mats = default_samples(4, 32)
        assert check_tensor_class(C + V, 2 * lam, 2 * Lam, pts, mats).passed


class TestMaterialModel:
    def test_isotropic_model_validates(self):
        mat = MaterialModel.isotropic((1.0, 1.0), (0.25, 0.5))
        assert (mat.lam, mat.Lam) == (1.0, 4.0)
        assert all(rep.passed for rep in mat.validate().values())

    def test_region_override(self):
        base = make_isotropic(1.0, 1.0)
        stiff = isotropic_tensor(2.0, 3.0)
        field = TensorField(base.base, (Region("inclusion", (0.4, 0.4, 0.6, 0.6), stiff),))
        T = field.at(np.array([[0.5, 0.5], [0.1, 0.1]]))
        np.testing.assert_array_equal(T[0], stiff)
        np.testing.assert_array_equal(T[1], base.base)

    def test_bad_window_rejected(self):
        C = make_isotropic(1.0, 1.0)
        with pytest.raises(ValueError):
            MaterialModel(C, C, 3.0, 2.0)
