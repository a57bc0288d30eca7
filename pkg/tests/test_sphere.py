import numpy as np
import pytest

from conflab import sphere as sp
from conflab import symmfunc as sf
from conflab.errors import NumericalError


def rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1.0)


@pytest.fixture(scope="module")
def cfg4():
    return sp.SphereConfig(m=2, N=201)


@pytest.fixture(scope="module")
def cfg6():
    return sp.SphereConfig(m=3, N=201)


class TestConfig:
    def test_grid_validation(self):
        with pytest.raises(ValueError):
            sp.SphereConfig(m=2, N=200)
        with pytest.raises(ValueError):
            sp.SphereConfig(m=2, N=31)
        with pytest.raises(ValueError):
            sp.SphereConfig(m=1, N=201)

    def test_round_volumes(self):
        assert rel(sp.SphereConfig(2, 201).volume_round, 8.0 * np.pi**2 / 3.0) < 1e-14
        assert rel(sp.SphereConfig(3, 201).volume_round, 16.0 * np.pi**3 / 15.0) < 1e-14

    def test_round_total_v_closed_forms(self):
        assert rel(sp.round_total_v(2), 4.0 * np.pi**2) < 1e-14
        assert rel(sp.round_total_v(3), 8.0 * np.pi**3 / 3.0) < 1e-14


class TestDerivatives:
    def test_constant(self, cfg4):
        du, ddu = sp.derivatives(cfg4, np.full(cfg4.N, 1.7))
        assert np.all(du == 0.0) and np.all(ddu == 0.0)

    def test_cos_theta(self, cfg4):
        u = np.cos(cfg4.theta)
        du, ddu = sp.derivatives(cfg4, u)
        h2 = cfg4.h**2
        assert np.max(np.abs(du + np.sin(cfg4.theta))) < 2.0 * h2
        assert np.max(np.abs(ddu + np.cos(cfg4.theta))) < 2.0 * h2

    def test_refinement_order(self):
        errs = []
        for N in (101, 201):
            cfg = sp.SphereConfig(m=2, N=N)
            u = np.cos(2.0 * cfg.theta)
            du, ddu = sp.derivatives(cfg, u)
            e = max(
                np.max(np.abs(du + 2.0 * np.sin(2.0 * cfg.theta))),
                np.max(np.abs(ddu + 4.0 * np.cos(2.0 * cfg.theta))),
            )
            errs.append(e)
        order = np.log2(errs[0] / errs[1])
        assert order >= 1.9


class TestGeometryOracles:
    def test_round_sphere_exact(self, cfg4):
        st = sp.geometry_state(cfg4, np.zeros(cfg4.N))
        assert np.all(st.a_rad == 0.5) and np.all(st.a_tan == 0.5)
        assert np.allclose(st.vm, 1.5) and np.allclose(st.l_rad, 1.5)
        assert np.allclose(st.l_tan, 1.5)

    def test_constant_rescaling(self, cfg4):
        c = 0.4
        st = sp.geometry_state(cfg4, np.full(cfg4.N, c))
        scale = np.exp(2.0 * c)
        assert np.max(np.abs(st.a_rad - 0.5 * scale)) < 1e-14
        assert np.max(np.abs(st.a_tan - 0.5 * scale)) < 1e-14
        # v_m dV is exactly invariant under constant shifts
        st0 = sp.geometry_state(cfg4, np.zeros(cfg4.N))
        assert rel(st.total_v, st0.total_v) < 1e-13
        assert rel(st.volume, np.exp(-cfg4.n * c) * st0.volume) < 1e-13

    def test_dilation_pullback_is_round(self):
        # conformal image of the round metric: eigenvalues 1/2 up to O(h^2)
        errs = []
        for N in (201, 401):
            cfg = sp.SphereConfig(m=2, N=N)
            st = sp.geometry_state(cfg, sp.dilation_factor(cfg, 1.3))
            errs.append(
                max(np.max(np.abs(st.a_rad - 0.5)), np.max(np.abs(st.a_tan - 0.5)))
            )
        assert errs[0] < 5e-5
        assert np.log2(errs[0] / errs[1]) >= 1.9

    def test_vm_matches_symmfunc_per_node(self, cfg6):
        u = sp.cos_modes(cfg6, [0.15, -0.1, 0.05])
        st = sp.geometry_state(cfg6, u)
        m, n = cfg6.m, cfg6.n
        for j in range(0, cfg6.N, 17):
            lam = st.eigenvalue_vector(j)
            assert rel(st.vm[j], sf.elem_sym(m, lam)) < 1e-12
            assert rel(st.l_rad[j], sf.elem_sym_omit(m - 1, 0, lam)) < 1e-12
            assert rel(st.l_tan[j], sf.elem_sym_omit(m - 1, 1, lam)) < 1e-12

    def test_scaling_covariance(self, cfg4):
        u = sp.cos_modes(cfg4, [0.1, 0.2])
        c = -0.3
        st = sp.geometry_state(cfg4, u)
        stc = sp.geometry_state(cfg4, u + c)
        scale = np.exp(2.0 * c)
        # u + c shifts the stencil inputs by ulps, amplified by 1/h^2
        tol = 50.0 * np.finfo(float).eps / cfg4.h**2
        assert np.max(np.abs(stc.a_rad - scale * st.a_rad)) < tol
        assert np.max(np.abs(stc.a_tan - scale * st.a_tan)) < tol

    def test_non_finite_raises(self, cfg4):
        u = np.zeros(cfg4.N)
        u[5] = 400.0  # e^{2u} overflows
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(NumericalError):
                sp.geometry_state(cfg4, u)


class TestIntegrals:
    def test_volume_round(self, cfg4):
        assert rel(sp.volume(cfg4, np.zeros(cfg4.N)), 8.0 * np.pi**2 / 3.0) < 1e-6

    def test_integrate_one_is_volume(self, cfg4):
        u = sp.cos_modes(cfg4, [0.2])
        st = sp.geometry_state(cfg4, u)
        assert rel(sp.integrate(cfg4, st, np.ones(cfg4.N)), st.volume) < 1e-15

    def test_total_v_round_values(self):
        for m, target in ((2, 4.0 * np.pi**2), (3, 8.0 * np.pi**3 / 3.0)):
            cfg = sp.SphereConfig(m=m, N=201)
            assert rel(sp.total_v(cfg, np.zeros(cfg.N)), target) < 1e-6

    def test_conformal_invariance_sweep(self):
        rng = np.random.default_rng(100)
        for m in (2, 3):
            target = sp.round_total_v(m)
            worst = {201: 0.0, 401: 0.0}
            for _ in range(20):
                coeffs = rng.uniform(-1, 1, size=3)
                coeffs *= 0.5 * rng.random() / np.sum(np.abs(coeffs))
                for N in (201, 401):
                    cfg = sp.SphereConfig(m=m, N=N)
                    u = sp.cos_modes(cfg, coeffs)
                    err = rel(sp.total_v(cfg, u), target)
                    worst[N] = max(worst[N], err)
            assert worst[201] <= 1e-3
            assert worst[401] <= 1e-4

    def test_invariance_convergence_order(self):
        errs = []
        for N in (101, 201, 401):
            cfg = sp.SphereConfig(m=2, N=N)
            u = sp.cos_modes(cfg, [0.2, -0.2, 0.1])
            errs.append(rel(sp.total_v(cfg, u), sp.round_total_v(2)))
        orders = [np.log2(errs[i] / errs[i + 1]) for i in range(2)]
        assert min(orders) >= 1.9


class TestDivergenceForm:
    def test_constant_maps_to_zero_exactly(self, cfg4):
        st = sp.geometry_state(cfg4, sp.cos_modes(cfg4, [0.2, 0.1]))
        out = sp.div_L_grad(cfg4, st, np.full(cfg4.N, 3.3))
        assert np.all(out == 0.0)

    def test_conservation(self, cfg4):
        st = sp.geometry_state(cfg4, sp.cos_modes(cfg4, [0.15, -0.1]))
        phi = sp.cos_modes(cfg4, [0.5, 0.3, 0.2])
        total = sp.integrate(cfg4, st, sp.div_L_grad(cfg4, st, phi))
        scale = sp.integrate(cfg4, st, np.abs(sp.div_L_grad(cfg4, st, phi)))
        assert abs(total) <= 1e-12 * max(scale, 1.0)

    def test_self_adjointness(self, cfg4):
        st = sp.geometry_state(cfg4, sp.cos_modes(cfg4, [0.1]))
        phi = sp.cos_modes(cfg4, [1.0, 0.2])
        psi = sp.cos_modes(cfg4, [-0.3, 0.0, 0.5])
        s1 = sp.integrate(cfg4, st, phi * sp.div_L_grad(cfg4, st, psi))
        s2 = sp.integrate(cfg4, st, psi * sp.div_L_grad(cfg4, st, phi))
        assert rel(s1, s2) <= 1e-12

    def test_ibp_identity_machine_precision(self, cfg4):
        st = sp.geometry_state(cfg4, sp.cos_modes(cfg4, [0.12, 0.08]))
        phi = sp.cos_modes(cfg4, [0.7, -0.2])
        psi = sp.cos_modes(cfg4, [0.1, 0.6])
        lhs = sp.integrate(cfg4, st, phi * sp.div_L_grad(cfg4, st, psi))
        rhs = -sp.flux_pairing(st, phi, psi)
        assert rel(lhs, rhs) <= 1e-13


class TestLinearization:
    def test_probe_one_gives_zero(self, cfg4):
        # rhs vanishes identically; lhs is d/dt of the conformal invariant,
        # zero in the continuum, O(h^2) for the discrete total
        u = sp.cos_modes(cfg4, [0.1])
        lhs, rhs, dev = sp.linearization_check(
            cfg4, u, np.cos(cfg4.theta), probe=np.ones(cfg4.N)
        )
        assert rhs == 0.0
        assert abs(lhs) <= cfg4.h**2

    def test_constant_udot_invariance_direction(self, cfg4):
        u = sp.cos_modes(cfg4, [0.1, 0.05])
        lhs, rhs, dev = sp.linearization_check(cfg4, u, np.ones(cfg4.N))
        assert rhs == 0.0
        assert abs(lhs) <= 1e-8

    def test_matches_finite_difference(self, cfg4):
        u = sp.cos_modes(cfg4, [0.1, 0.05])
        step = 1e-4
        lhs, rhs, dev = sp.linearization_check(
            cfg4, u, np.cos(cfg4.theta), step=step
        )
        tol = max(1e-6, 6.0 * (cfg4.h**2 + step**2) * max(abs(rhs), 1.0))
        assert dev <= tol

    def test_step_underflow(self, cfg4):
        with pytest.raises(NumericalError):
            sp.linearization_check(
                cfg4, np.zeros(cfg4.N), np.cos(cfg4.theta), step=0.0
            )


class TestConePredicate:
    def test_round_and_constants(self, cfg4):
        assert sp.in_cone_Cm(cfg4, np.zeros(cfg4.N))
        for c in (-2.0, 0.7, 3.0):
            assert sp.in_cone_Cm(cfg4, np.full(cfg4.N, c))

    def test_large_perturbation_leaves_cone(self, cfg4):
        u = 3.0 * np.cos(cfg4.theta)
        st = sp.geometry_state(cfg4, u)
        assert np.min(st.a_rad) < 0.0
        assert not sp.in_cone_Cm(cfg4, u)


class TestSerialization:
    def test_header_and_shape(self, cfg4):
        st = sp.geometry_state(cfg4, np.zeros(cfg4.N))
        text = sp.state_to_csv(st)
        lines = text.strip().split("\n")
        assert lines[0] == "theta,u,a_rad,a_tan,vm,l_rad,l_tan,weight"
        assert len(lines) == cfg4.N + 1
        row = lines[1].split(",")
        assert float(row[0]) == 0.0 and float(row[4]) == pytest.approx(1.5)
