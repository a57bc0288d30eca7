import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conflab import symmfunc as sf
from conflab.errors import DomainError

from oracles import poly_coeff_sigmas, subset_sigma, subset_sigma_omit


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1.0)


finite_entries = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False)


class TestElemSym:
    def test_all_ones(self):
        assert sf.elem_sym(2, [1.0, 1.0, 1.0, 1.0]) == pytest.approx(6.0)

    def test_1234(self):
        # frozen from the subset oracle
        assert subset_sigma(2, [1, 2, 3, 4]) == 35.0
        assert sf.elem_sym(2, [1.0, 2.0, 3.0, 4.0]) == pytest.approx(35.0)

    def test_sigma0(self):
        assert sf.elem_sym(0, [5.0, -2.0, 0.3]) == 1.0

    def test_range_error(self):
        with pytest.raises(ValueError):
            sf.elem_sym(5, [1.0, 2.0, 3.0, 4.0])
        with pytest.raises(ValueError):
            sf.elem_sym(-1, [1.0, 2.0])

    @given(st.lists(finite_entries, min_size=2, max_size=10))
    @settings(max_examples=150, deadline=None)
    def test_oracle_equivalence(self, lam):
        lam = np.array(lam)
        for k in range(lam.size + 1):
            assert rel_err(sf.elem_sym(k, lam), subset_sigma(k, lam)) <= 1e-12

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(7)
        lam = rng.uniform(-2, 2, size=(40, 6))
        table = sf.elem_sym_all(lam)
        for r in range(40):
            for k in range(7):
                assert rel_err(table[r, k], sf.elem_sym(k, lam[r])) <= 1e-13


class TestOmitAndNewton:
    def test_omit_examples(self):
        lam = np.array([1.0, 2.0, 3.0, 4.0])
        assert sf.elem_sym_omit(2, 3, lam) == pytest.approx(11.0)  # sigma_2(1,2,3)
        assert sf.elem_sym_omit(2, 2, lam) == pytest.approx(14.0)  # sigma_2(1,2,4)
        assert sf.elem_sym_omit(0, 1, lam) == 1.0

    def test_omit_index_error(self):
        with pytest.raises(ValueError):
            sf.elem_sym_omit(1, 4, [1.0, 2.0, 3.0, 4.0])

    def test_newton_diagonal_examples(self):
        nd = sf.newton_diagonal(1, [1.0, 2.0, 3.0, 4.0])
        assert np.allclose(nd, [9.0, 8.0, 7.0, 6.0])
        assert np.allclose(sf.newton_diagonal(0, [0.3, 0.1, -2.0]), 1.0)
        assert np.allclose(sf.newton_diagonal(1, [0.5] * 4), 1.5)

    @given(st.lists(finite_entries, min_size=2, max_size=8))
    @settings(max_examples=150, deadline=None)
    def test_recursion_identity(self, lam):
        # sigma_k = sigma_{k;i} + lam_i sigma_{k-1;i}
        lam = np.array(lam)
        n = lam.size
        for k in range(1, n):
            for i in range(n):
                lhs = sf.elem_sym(k, lam)
                rhs = sf.elem_sym_omit(k, i, lam) + lam[i] * sf.elem_sym_omit(
                    k - 1, i, lam
                )
                assert rel_err(lhs, rhs) <= 1e-12

    @given(st.lists(finite_entries, min_size=2, max_size=8))
    @settings(max_examples=150, deadline=None)
    def test_euler_identity(self, lam):
        # sum_i lam_i sigma_{k;i} = (k+1) sigma_{k+1}
        lam = np.array(lam)
        n = lam.size
        for k in range(n):
            lhs = float(np.dot(lam, sf.newton_diagonal(k, lam)))
            rhs = (k + 1) * sf.elem_sym(k + 1, lam) if k + 1 <= n else 0.0
            assert rel_err(lhs, rhs) <= 1e-11


class TestNormalizedAndMaps:
    def test_normalized_examples(self):
        assert sf.normalized_sym(2, [1.0] * 4) == pytest.approx(1.0)
        assert sf.normalized_sym(2, [1.0, 2.0, 3.0, 4.0]) == pytest.approx(35.0 / 6.0)
        assert sf.normalized_sym(1, [1.0, 2.0, 3.0]) == pytest.approx(2.0)

    def test_schouten_round_sphere(self):
        a = sf.schouten_from_ricci(np.full(4, 3.0))
        assert np.allclose(a, 0.5)
        assert np.allclose(sf.schouten_from_ricci(np.zeros(6)), 0.0)

    def test_schouten_linearity(self):
        rng = np.random.default_rng(3)
        lam = rng.normal(size=8)
        assert np.allclose(
            sf.schouten_from_ricci(2.5 * lam), 2.5 * sf.schouten_from_ricci(lam)
        )

    def test_ricci_round_trip(self):
        assert np.allclose(sf.ricci_from_schouten(np.full(4, 0.5)), 3.0)
        rng = np.random.default_rng(4)
        for n in (4, 6, 8):
            lam = rng.normal(size=n)
            back = sf.ricci_from_schouten(sf.schouten_from_ricci(lam))
            assert np.max(np.abs(back - lam)) <= 1e-14 * max(1.0, np.max(np.abs(lam)))

    def test_cone_membership(self):
        assert sf.in_positive_cone(2, [0.5] * 4)
        assert not sf.in_positive_cone(2, [-1.0] * 4)
        # sigma_1 = 4.5 > 0, sigma_2 = 4.5 > 0
        assert subset_sigma(2, [3.0, 1.0, 1.0, -0.5]) == pytest.approx(4.5)
        assert sf.in_positive_cone(2, [3.0, 1.0, 1.0, -0.5])


class TestMaclaurin:
    def test_equal_entries_zero_slack(self):
        holds, slack = sf.maclaurin_check([1.0] * 4)
        assert holds and abs(slack) <= 1e-14

    def test_examples(self):
        holds, slack = sf.maclaurin_check([1.0, 2.0, 3.0, 4.0])
        assert holds
        # smallest gap in the chain for (1,2,3): sqrt(11/3) vs 2
        holds, slack = sf.maclaurin_check([1.0, 2.0, 3.0])
        assert holds
        assert np.sqrt(35.0 / 6.0) < 2.5 and np.sqrt(11.0 / 3.0) < 2.0

    def test_domain_error(self):
        with pytest.raises(DomainError):
            sf.maclaurin_check([1.0, -5.0, 1.0, 1.0])

    def test_random_positive_vectors(self):
        rng = np.random.default_rng(11)
        for n in (4, 6, 8):
            lam = rng.uniform(0.01, 3.0, size=(2000, n))
            for row in lam[:200]:
                holds, slack = sf.maclaurin_check(row)
                assert holds and slack >= -1e-12


class TestDerivativeRoots:
    def test_quadratic_formula_case(self):
        mu = sf.derivative_roots([1.0, 2.0, 3.0], 1)
        expected = np.array([2.0 - 1.0 / np.sqrt(3.0), 2.0 + 1.0 / np.sqrt(3.0)])
        assert np.max(np.abs(mu - expected)) <= 1e-12

    def test_constant_vector(self):
        for d in (1, 2, 3):
            mu = sf.derivative_roots([0.7] * 5, d)
            assert np.allclose(mu, 0.7)

    def test_symmetric_pair(self):
        assert np.allclose(sf.derivative_roots([-1.0, 1.0], 1), [0.0])

    def test_order_error(self):
        with pytest.raises(ValueError):
            sf.derivative_roots([1.0, 2.0], 2)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(5)
        lam = rng.uniform(-2, 2, size=(50, 8))
        batch = sf.derivative_roots_batch(lam)
        for r in range(50):
            scalar = sf.derivative_roots(lam[r], 1)
            assert np.max(np.abs(batch[r] - scalar)) <= 1e-11


class TestVieta:
    def test_cubic_example(self):
        holds, dev = sf.vieta_invariance_check([1.0, 2.0, 3.0])
        assert holds and dev <= 1e-12
        mu = sf.derivative_roots([1.0, 2.0, 3.0], 1)
        assert np.prod(mu) == pytest.approx(11.0 / 3.0, rel=1e-12)

    def test_constant_vector(self):
        holds, dev = sf.vieta_invariance_check([2.0] * 6)
        assert holds and dev <= 1e-13

    def test_random_degree8(self):
        rng = np.random.default_rng(9)
        lam = rng.uniform(-2, 2, size=(300, 8))
        for row in lam:
            holds, dev = sf.vieta_invariance_check(row)
            assert holds and dev <= 1e-10

    def test_against_coefficient_level_vieta(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            lam = rng.uniform(-2, 2, size=8)
            mu = sf.derivative_roots(lam, 1)
            tilde_lam = poly_coeff_sigmas(lam)
            tilde_mu = poly_coeff_sigmas(mu)
            assert np.max(np.abs(tilde_lam[:8] - tilde_mu)) <= 1e-10


class TestCroosh:
    def test_round_sphere_equality_n4(self):
        res = sf.croosh_inequality([0.5] * 4, 0)
        assert res.lhs == pytest.approx(4.5, abs=1e-12)
        assert res.rhs == pytest.approx(4.5, abs=1e-12)
        assert res.holds

    def test_round_sphere_equality_n6(self):
        for i in range(6):
            res = sf.croosh_inequality([0.5] * 6, i)
            assert res.lhs == pytest.approx(12.5, abs=1e-12)
            assert res.rhs == pytest.approx(12.5, abs=1e-12)
            assert res.holds

    def test_scaling_invariance_of_holds(self):
        rng = np.random.default_rng(21)
        a = sf.sample_cone(2, 50, rng)
        for row in a:
            for c in (0.1, 1.0, 7.3):
                r1 = sf.croosh_inequality(row, 2)
                r2 = sf.croosh_inequality(c * row, 2)
                assert r1.holds == r2.holds
                assert r2.lhs == pytest.approx(c**2 * r1.lhs, rel=1e-12)

    def test_domain_error_off_cone(self):
        with pytest.raises(DomainError):
            sf.croosh_inequality([-1.0, -1.0, -1.0, -1.0], 0)

    def test_radial_identity_multiplicity_pattern_n4(self):
        # for a = (x, y, y, y) the i=0 bound is an identity: both sides 9y(x+y)
        rng = np.random.default_rng(22)
        for _ in range(50):
            x, y = rng.uniform(0.05, 2.0, size=2)
            a = np.array([x, y, y, y])
            if not sf.in_positive_cone(2, a):
                continue
            res = sf.croosh_inequality(a, 0)
            assert rel_err(res.lhs, res.rhs) <= 1e-13

    def test_fuzz_small(self):
        rng = np.random.default_rng(23)
        for m in (2, 3, 4):
            a = sf.sample_cone(m, 2000, rng)
            margins = sf.croosh_margins_batch(a)
            lhs = (2 * m - 1.0) * sf.elem_sym_all(a)[:, m]
            scale = np.maximum(np.abs(lhs)[:, None], 1.0)
            assert np.all(margins >= -1e-12 * scale)

    def test_rearranged_matrix_form(self):
        # sigma_{m-1;i}/sigma_m >= (n-1)/lambda_i on the cone with positive Ricci
        rng = np.random.default_rng(24)
        a = sf.sample_cone(3, 500, rng)
        lam = sf.ricci_from_schouten(a)
        keep = np.all(lam > 0, axis=1)
        a, lam = a[keep], lam[keep]
        assert a.shape[0] > 0
        sig_m = sf.elem_sym_all(a)[:, 3]
        for row, lrow, sm in zip(a, lam, sig_m):
            for i in range(6):
                ratio = sf.elem_sym_omit(2, i, row) / sm
                assert ratio >= 5.0 / lrow[i] - 1e-10 * max(1.0, abs(ratio))


class TestSampler:
    def test_deterministic(self):
        a = sf.sample_cone(2, 100, np.random.default_rng(42))
        b = sf.sample_cone(2, 100, np.random.default_rng(42))
        assert np.array_equal(a, b)

    def test_inside_cone_and_box(self):
        a = sf.sample_cone(3, 500, np.random.default_rng(1))
        assert np.all(sf.positive_cone_mask(3, a))
        assert np.all(a >= -1.0) and np.all(a <= 2.0)
