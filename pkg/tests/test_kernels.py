import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from delaylearn import ConfigError, gauss_kernel, gauss_kernel_ddelay, surrogate_pd
from delaylearn.kernels import kernel_taps, surrogate_primitive


class TestSurrogate:
    def test_peak(self):
        assert surrogate_pd(1.0, 1.0, 0.3) == pytest.approx(0.3)

    @pytest.mark.parametrize("v", [0.0, 2.0, -1.0, 3.5])
    def test_zero_outside_support(self, v):
        assert surrogate_pd(v, 1.0, 0.3) == 0.0

    def test_half_way(self):
        assert surrogate_pd(1.5, 1.0, 0.3) == pytest.approx(0.15)

    def test_scales_with_threshold(self):
        assert surrogate_pd(2.0, 2.0, 0.3) == pytest.approx(0.15)

    @given(st.floats(-1.0, 3.0), st.floats(0.2, 2.0))
    def test_primitive_derivative(self, v, v_th):
        assume(min(abs(v), abs(v - v_th), abs(v - 2 * v_th)) > 1e-4)  # kinks of the triangle
        h = 1e-6
        num = (surrogate_primitive(v + h, v_th, 0.3) - surrogate_primitive(v - h, v_th, 0.3)) / (2 * h)
        assert num == pytest.approx(float(surrogate_pd(v, v_th, 0.3)), abs=1e-6)


class TestGaussKernel:
    def test_peak(self):
        assert gauss_kernel(5.0, 2.0, 3.0, 1.0) == pytest.approx(1 / math.sqrt(2 * math.pi))
        assert gauss_kernel(0.0, 0.0, 0.0, 1.0) == pytest.approx(0.398942, abs=1e-6)

    def test_one_sigma(self):
        assert gauss_kernel(1.0, 0.0, 0.0, 1.0) == pytest.approx(0.241971, abs=1e-6)
        assert gauss_kernel(-1.0, 0.0, 0.0, 1.0) == pytest.approx(0.241971, abs=1e-6)

    def test_tail(self):
        assert gauss_kernel(100.0, 0.0, 0.0, 2.0) < 1e-200

    @pytest.mark.parametrize("sigma", [0.0, -1.0])
    def test_bad_sigma(self, sigma):
        with pytest.raises(ConfigError):
            gauss_kernel(0.0, 0.0, 0.0, sigma)
        with pytest.raises(ConfigError):
            gauss_kernel_ddelay(0.0, 0.0, 0.0, sigma)


class TestKernelDerivative:
    def test_zero_at_peak(self):
        assert gauss_kernel_ddelay(4.0, 1.0, 3.0, 2.0) == 0.0

    @given(st.floats(0.01, 10.0), st.floats(0.3, 4.0))
    def test_odd(self, u, sigma):
        assert gauss_kernel_ddelay(u, 0.0, 0.0, sigma) == pytest.approx(-gauss_kernel_ddelay(-u, 0.0, 0.0, sigma))

    def test_matches_finite_difference(self):
        h = 1e-5
        num = (gauss_kernel(1.0, 0.0, h, 1.0) - gauss_kernel(1.0, 0.0, -h, 1.0)) / (2 * h)
        assert gauss_kernel_ddelay(1.0, 0.0, 0.0, 1.0) == pytest.approx(0.241971, abs=1e-6)
        assert abs(gauss_kernel_ddelay(1.0, 0.0, 0.0, 1.0) - num) < 1e-8

    @given(st.floats(-8.0, 8.0), st.floats(-3.0, 3.0), st.floats(0.3, 4.0))
    def test_is_delay_derivative(self, t, d, sigma):
        h = 1e-6
        num = (gauss_kernel(t, 0.0, d + h, sigma) - gauss_kernel(t, 0.0, d - h, sigma)) / (2 * h)
        assert gauss_kernel_ddelay(t, 0.0, d, sigma) == pytest.approx(num, abs=1e-7)

    def test_positive_after_centre(self):
        # delaying a spike raises its contribution at times after the kernel centre
        assert gauss_kernel_ddelay(3.0, 0.0, 1.0, 1.0) > 0
        assert gauss_kernel_ddelay(0.0, 0.0, 1.0, 1.0) < 0


def test_kernel_taps_layout():
    frac = np.array([[0.0, 0.3], [-0.5, 0.5]])
    taps = kernel_taps(frac, 3, 1.0)
    assert taps.shape == (2, 2, 7)
    assert_allclose(taps[0, 1], gauss_kernel(np.arange(-3, 4), 0.0, 0.3, 1.0))
    dtaps = kernel_taps(frac, 3, 1.0, derivative=True)
    assert_allclose(dtaps[1, 0], gauss_kernel_ddelay(np.arange(-3, 4), 0.0, -0.5, 1.0))
