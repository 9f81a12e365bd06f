import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradconstraint.energy import (d2phi_star, dphi_star, dual_energy_h, flow_weight, phi,
                                   phi_star, primal_energy_h)
from gradconstraint.spaces import CRFunction, ProblemData, RTFunction, cr_interpolate, rt_interpolate

from conftest import unit_triangle

vec = st.tuples(st.floats(-10, 10), st.floats(-10, 10)).map(np.array)
bound = st.floats(0.05, 5.0)


class TestConjugate:
    def test_branches(self):
        assert phi_star([0.6, 0.8], 1.0) == pytest.approx(0.5, abs=1e-15)
        assert phi_star([3.0, 4.0], 1.0) == pytest.approx(4.5, abs=1e-15)
        assert phi_star([0.0, 0.0], 2.3) == 0.0

    def test_clamp(self):
        np.testing.assert_allclose(dphi_star([0.3, 0.4], 1.0), [0.3, 0.4])
        np.testing.assert_allclose(dphi_star([3.0, 4.0], 1.0), [0.6, 0.8], atol=1e-15)
        np.testing.assert_allclose(dphi_star([0.0, 0.0], 1.0), [0.0, 0.0])

    def test_hessian_examples(self):
        np.testing.assert_allclose(d2phi_star([2.0, 0.0], 1.0), [[0, 0], [0, 0.5]], atol=1e-15)
        np.testing.assert_allclose(d2phi_star([0.1, 0.1], 1.0), np.eye(2))

    def test_hessian_kink_flag(self):
        hess, flag = d2phi_star(np.array([[1.0 + 1e-13, 0.0], [2.0, 0.0]]), 1.0, return_flag=True)
        assert flag.tolist() == [True, False]
        np.testing.assert_allclose(hess[0], np.eye(2))

    def test_flow_weight_examples(self):
        assert flow_weight([3.0, 4.0], 1.0) == pytest.approx(0.2)
        assert flow_weight([0.0, 0.0], 1.0) == 1.0
        assert flow_weight([0.3, 0.4], 1.0) == 1.0

    def test_vectorized_shapes(self):
        s = np.random.default_rng(0).standard_normal((4, 5, 2))
        assert phi_star(s, 1.0).shape == (4, 5)
        assert dphi_star(s, 1.0).shape == (4, 5, 2)
        assert d2phi_star(s, 1.0).shape == (4, 5, 2, 2)
        assert flow_weight(s, np.ones((4, 5))).shape == (4, 5)

    def test_primal_density(self):
        assert phi([0.6, 0.8], 1.0) == pytest.approx(0.5)
        assert phi([3.0, 4.0], 1.0) == np.inf

    @settings(max_examples=300, deadline=None)
    @given(vec, vec, bound)
    def test_fenchel_young(self, s, t, zeta):
        r = np.linalg.norm(t)
        if r > zeta:
            t = t * zeta / r
        assert 0.5 * t @ t + phi_star(s, zeta) - s @ t >= -1e-12

    @settings(max_examples=200, deadline=None)
    @given(vec, bound)
    def test_fenchel_young_equality(self, s, zeta):
        t = dphi_star(s, zeta)
        assert 0.5 * t @ t + phi_star(s, zeta) - s @ t == pytest.approx(0.0, abs=1e-12 * (1 + s @ s))

    @settings(max_examples=200, deadline=None)
    @given(vec, vec, bound)
    def test_clamp_nonexpansive(self, s, t, zeta):
        assert np.linalg.norm(dphi_star(s, zeta) - dphi_star(t, zeta)) <= np.linalg.norm(s - t) + 1e-14

    @settings(max_examples=200, deadline=None)
    @given(vec, bound)
    def test_clamp_bound_and_weight(self, s, zeta):
        assert np.linalg.norm(dphi_star(s, zeta)) <= zeta * (1 + 1e-15)
        w = flow_weight(s, zeta)
        assert 0.0 < w <= 1.0
        np.testing.assert_array_equal(w * s, dphi_star(s, zeta))

    def test_finite_differences(self):
        rng = np.random.default_rng(7)
        checked = 0
        h = 1e-6
        while checked < 100:
            s = rng.uniform(-3, 3, 2)
            zeta = rng.uniform(0.2, 2.0)
            if abs(np.linalg.norm(s) - zeta) <= 1e-3:
                continue
            fd = np.array([(phi_star(s + h * e, zeta) - phi_star(s - h * e, zeta)) / (2 * h)
                           for e in np.eye(2)])
            assert np.abs(fd - dphi_star(s, zeta)).max() <= 1e-6
            fd2 = np.array([(dphi_star(s + h * e, zeta) - dphi_star(s - h * e, zeta)) / (2 * h)
                            for e in np.eye(2)]).T
            assert np.abs(fd2 - d2phi_star(s, zeta)).max() <= 1e-5
            checked += 1

    @settings(max_examples=200, deadline=None)
    @given(vec, bound)
    def test_hessian_psd(self, s, zeta):
        eig = np.linalg.eigvalsh(d2phi_star(s, zeta))
        assert eig.min() >= -1e-15 and eig.max() <= 1 + 1e-15


class TestDiscreteEnergies:
    def test_zero(self, disk):
        m = disk(1)
        data = ProblemData.constant(m, f=5.0)
        e = primal_energy_h(CRFunction(m, np.zeros(m.n_sides)), data)
        assert e.feasible and e.value == 0.0

    def test_one_triangle_primal(self):
        m = unit_triangle()
        v = cr_interpolate(lambda x: x[:, 0], m)
        data = ProblemData(m, np.ones(1), np.zeros(1), np.zeros(3), v.dofs.copy())
        e = primal_energy_h(v, data)
        assert e.feasible and e.value == pytest.approx(0.25, abs=1e-15)

    def test_primal_gradient_violation(self):
        m = unit_triangle()
        v = cr_interpolate(lambda x: 2 * x[:, 0], m)
        data = ProblemData(m, np.ones(1), np.zeros(1), np.zeros(3), v.dofs.copy())
        e = primal_energy_h(v, data)
        assert not e.feasible and e.violations == ("gradient bound",)

    def test_primal_dirichlet_violation(self):
        m = unit_triangle()
        v = cr_interpolate(lambda x: 0.5 * x[:, 0], m)
        data = ProblemData.constant(m)
        assert primal_energy_h(v, data).violations == ("Dirichlet data",)

    def test_primal_load(self):
        m = unit_triangle()
        v = CRFunction(m, np.array([0.0, 0.0, 0.0]))
        data = ProblemData.constant(m, f=3.0)
        assert primal_energy_h(v, data).value == 0.0
        v2 = CRFunction(m, np.full(3, 2.0))
        data2 = ProblemData.constant(m, f=3.0, u_D=2.0)
        # -(f, Pi v) = -3 * 2 * 0.5
        assert primal_energy_h(v2, data2).value == pytest.approx(-3.0)

    def test_dual_zero(self, disk):
        m = disk(1)
        e = dual_energy_h(RTFunction(m, np.zeros(m.n_sides)), ProblemData.constant(m))
        assert e.feasible and e.value == 0.0

    def test_dual_one_element(self):
        m = unit_triangle()
        y = rt_interpolate(lambda x: np.tile([3.0, 4.0], (len(x), 1)), m)
        e = dual_energy_h(y, ProblemData.constant(m))
        assert e.feasible and e.value == pytest.approx(-2.25, abs=1e-14)

    def test_dual_divergence_violation(self):
        m = unit_triangle()
        y = rt_interpolate(lambda x: x.copy(), m)
        e = dual_energy_h(y, ProblemData.constant(m, f=1.0))
        assert e.violations == ("divergence",)
        assert dual_energy_h(y, ProblemData.constant(m, f=-2.0)).feasible

    def test_dual_boundary_term(self):
        m = unit_triangle()
        y = rt_interpolate(lambda x: x.copy(), m)
        data = ProblemData.constant(m, f=-2.0, u_D=1.5)
        # total outflux is div * |T| = 1, paired with the constant u_D
        expected = -0.5 * phi_star(m.geometry.centroid[0], 1.0) + 1.5
        assert dual_energy_h(y, data).value == pytest.approx(expected, abs=1e-14)
