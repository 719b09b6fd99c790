from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hbem import kernels
from hbem.kernels import (
    SingularPointError,
    constants,
    gamma,
    grad_gamma,
    kernel_Dtilde,
    kernel_Dtilde_star,
    kernel_K,
    kernel_Kstar,
    neumann_function,
    reflect,
)

from .oracles import DTILDE_AXIS, GAMMA_DIST2, GAMMA_UNIT, NEUMANN_AXIS

coord = st.floats(-5.0, 5.0, allow_nan=False)
point = st.tuples(coord, coord, coord).map(np.array)
below = st.tuples(coord, coord, st.floats(-5.0, -0.1)).map(np.array)
scale = st.floats(0.1, 10.0)


def unit(v):
    return v / np.linalg.norm(v)


class TestConstants:
    def test_three_dimensional_values(self):
        c = constants(3)
        assert c.omega_d == 4 * math.pi
        assert c.kappa_d == pytest.approx(-1 / (4 * math.pi), rel=1e-15)

    @pytest.mark.parametrize("d", [3, 4, 5, 7])
    def test_kappa_negative(self, d):
        assert constants(d).kappa_d < 0

    def test_low_dimension_rejected(self):
        with pytest.raises(ValueError):
            constants(2)


class TestReflect:
    def test_sign_flip(self):
        assert reflect((1, 2, -3)).tolist() == [1, 2, 3]

    def test_plane_point_fixed(self):
        assert reflect((0.5, 0, 0)).tolist() == [0.5, 0, 0]

    def test_involution_example(self):
        assert reflect(reflect((-1, 4, -7))).tolist() == [-1, 4, -7]

    @given(point, point)
    def test_isometric_involution(self, x, y):
        assert np.array_equal(reflect(reflect(x)), x)
        assert np.linalg.norm(reflect(x) - reflect(y)) == pytest.approx(np.linalg.norm(x - y), abs=1e-12)


class TestGamma:
    def test_unit_distance(self):
        assert gamma((1, 0, 0)) == pytest.approx(GAMMA_UNIT, rel=1e-15)

    def test_axis_point(self):
        assert gamma((0, 0, -2)) == pytest.approx(GAMMA_DIST2, rel=1e-15)

    def test_singular(self):
        with pytest.raises(SingularPointError):
            gamma((0, 0, 0))

    @given(point.filter(lambda v: np.linalg.norm(v) > 1e-3), scale)
    def test_homogeneity(self, x, lam):
        assert gamma(lam * x) == pytest.approx(gamma(x) / lam, rel=1e-12)
        assert gamma(x) < 0

    def test_vectorized_matches_scalar(self, rng):
        x = rng.normal(size=(7, 3))
        vec = gamma(x)
        assert vec.shape == (7,)
        assert np.allclose(vec, [gamma(r) for r in x], rtol=0, atol=1e-16)


class TestGradGamma:
    def test_unit_axis(self):
        assert np.allclose(grad_gamma((1, 0, 0)), [1 / (4 * math.pi), 0, 0], rtol=1e-15)

    @given(point.filter(lambda v: np.linalg.norm(v) > 1e-3))
    def test_odd(self, x):
        assert np.array_equal(grad_gamma(-x), -grad_gamma(x))

    def test_finite_difference(self):
        x = np.array([0.3, -0.4, -1.2])
        h = 1e-5
        fd = np.array([(gamma(x + h * e) - gamma(x - h * e)) / (2 * h) for e in np.eye(3)])
        assert np.linalg.norm(fd - grad_gamma(x)) <= 1e-6 * np.linalg.norm(grad_gamma(x))

    @given(point.filter(lambda v: np.linalg.norm(v) > 1e-2), scale)
    def test_homogeneity(self, x, lam):
        assert np.allclose(grad_gamma(lam * x), lam**-2 * grad_gamma(x), rtol=1e-12, atol=0)

    def test_singular(self):
        with pytest.raises(SingularPointError):
            grad_gamma(np.zeros(3))


class TestNeumannFunction:
    def test_plane_doubles(self):
        x, y = np.array([0.7, -0.2, 0.0]), np.array([0.1, 0.3, -1.5])
        assert neumann_function(x, y) == pytest.approx(2 * gamma(x - y), rel=1e-15)

    def test_axis_value(self):
        assert neumann_function((0, 0, -1), (0, 0, -2)) == pytest.approx(NEUMANN_AXIS, rel=1e-14)

    def test_symmetry_example(self):
        x, y = (1, 0, -1), (0, 1, -2)
        assert neumann_function(x, y) == pytest.approx(neumann_function(y, x), rel=1e-15)

    @given(below, below)
    def test_symmetry(self, x, y):
        if np.linalg.norm(x - y) < 1e-3:
            return
        assert neumann_function(x, y) == pytest.approx(neumann_function(y, x), rel=1e-12)

    def test_coincident_raises(self):
        with pytest.raises(SingularPointError):
            neumann_function((0, 0, -1), (0, 0, -1))


class TestBoundaryKernels:
    def test_K_perpendicular_zero(self):
        assert kernel_K((0, 0, 0), (1, 1, 0), (0, 0, 1)) == 0.0

    def test_K_example(self):
        assert kernel_K((0, 0, 0), (1, 0, 0), (1, 0, 0)) == pytest.approx(1 / (4 * math.pi), rel=1e-15)

    @settings(max_examples=60)
    @given(point, point, point.filter(lambda v: np.linalg.norm(v) > 0.1))
    def test_K_is_normal_derivative_in_y(self, x, y, n):
        if np.linalg.norm(x - y) < 1e-2:
            return
        n = unit(n)
        # d/dy Gamma(x - y) = -grad_gamma(x - y)
        expected = float(np.dot(n, -grad_gamma(x - y)))
        assert kernel_K(x, y, n) == pytest.approx(expected, rel=1e-12, abs=1e-15)

    def test_Kstar_transpose(self, rng):
        for _ in range(20):
            x, y, n = rng.normal(size=(3, 3))
            n = unit(n)
            assert kernel_Kstar(x, y, n) == kernel_K(y, x, n)

    def test_Kstar_example(self):
        assert kernel_Kstar((1, 0, 0), (0, 0, 0), (1, 0, 0)) == pytest.approx(1 / (4 * math.pi), rel=1e-15)

    def test_Kstar_perpendicular_zero(self):
        assert kernel_Kstar((1, 0, 0), (0, 0, 0), (0, 1, 0)) == 0.0

    def test_Dtilde_is_K_at_reflection(self, rng):
        for _ in range(20):
            x, y = rng.normal(size=(2, 3)) - [0, 0, 3]
            n = unit(rng.normal(size=3))
            assert kernel_Dtilde(x, y, n) == kernel_K(reflect(x), y, n)

    def test_Dtilde_axis_value(self):
        assert kernel_Dtilde((0, 0, -1), (0, 0, -1), (0, 0, -1)) == pytest.approx(DTILDE_AXIS, rel=1e-14)

    def test_Dtilde_star_axis_value(self):
        assert kernel_Dtilde_star((0, 0, -1), (0, 0, -1), (0, 0, -1)) == pytest.approx(DTILDE_AXIS, rel=1e-14)

    @given(below, below, point.filter(lambda v: np.linalg.norm(v) > 0.1))
    def test_Dtilde_star_transpose_and_bound(self, x, y, n):
        n = unit(n)
        assert kernel_Dtilde_star(x, y, n) == pytest.approx(kernel_Dtilde(y, x, n), rel=1e-12, abs=1e-16)
        delta0 = min(-x[2], -y[2])
        assert abs(kernel_Dtilde(x, y, n)) <= 1 / (4 * math.pi * (2 * delta0) ** 2) * (1 + 1e-12)

    def test_Dtilde_star_finite_on_diagonal(self):
        v = kernel_Dtilde_star((0.3, 0.2, -0.5), (0.3, 0.2, -0.5), unit(np.array([1.0, 1.0, 1.0])))
        assert math.isfinite(v)

    def test_singular_inputs_raise(self):
        with pytest.raises(SingularPointError):
            kernel_K((1, 1, 1), (1, 1, 1), (0, 0, 1))
        with pytest.raises(SingularPointError):
            kernel_Dtilde((0, 0, 1), (0, 0, -1), (0, 0, 1))
        with pytest.raises(SingularPointError):
            kernel_Dtilde_star((0, 0, -1), (0, 0, 1), (0, 0, 1))

    def test_threads_see_identical_results(self, rng):
        from concurrent.futures import ThreadPoolExecutor

        x = rng.normal(size=(200, 3))
        y = rng.normal(size=(200, 3)) + 5
        n = rng.normal(size=(200, 3))
        ref = kernels.kernel_K(x, y, n)
        with ThreadPoolExecutor(4) as pool:
            outs = list(pool.map(lambda _: kernels.kernel_K(x, y, n), range(8)))
        assert all(np.array_equal(o, ref) for o in outs)
