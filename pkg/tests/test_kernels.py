"""Cross-backend agreement of the compiled and pure-python kernels."""

import numpy as np
import pytest

from medbn_lab import _kernels_py as py
from medbn_lab import kernels

compiled = pytest.importorskip("medbn_lab._kernels")


def random_cs(rng, c=5, n=23):
    return np.ascontiguousarray(rng.standard_normal((c, n)))


class TestBackendAgreement:
    def test_tebn_stats(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            cs = random_cs(rng)
            for a, b in zip(py.tebn_stats(cs), compiled.tebn_stats(cs)):
                np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)

    def test_channel_median_identical(self):
        rng = np.random.default_rng(11)
        for n in (1, 2, 3, 8, 23, 64, 501):
            cs = np.ascontiguousarray(rng.standard_normal((4, n)))
            v1, s1 = py.channel_median(cs)
            v2, s2 = compiled.channel_median(cs)
            np.testing.assert_array_equal(v1, v2)
            np.testing.assert_array_equal(s1, s2)

    def test_channel_median_ties_pick_lowest_index(self):
        cs = np.array([[5.0, 1.0, 5.0, 0.0, 5.0]])
        for impl in (py, compiled):
            v, s = impl.channel_median(cs)
            assert v[0] == 5.0
            assert s[0] == 0  # lowest flat index among the tied values

    def test_medbn_and_mad_stats(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            cs = random_cs(rng, c=3, n=17)
            for a, b in zip(py.medbn_stats(cs), compiled.medbn_stats(cs)):
                np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)
            for a, b in zip(py.mad_stats(cs), compiled.mad_stats(cs)):
                np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)

    def test_forward_backward(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            cs = random_cs(rng, c=4, n=9)
            g = random_cs(rng, c=4, n=9)
            loc = rng.standard_normal(4)
            scale = rng.uniform(0.5, 2.0, size=4)
            gamma = rng.uniform(0.5, 2.0, size=4)
            beta = rng.standard_normal(4)
            np.testing.assert_allclose(
                py.bn_forward(cs, loc, scale, gamma, beta, 1e-5),
                compiled.bn_forward(cs, loc, scale, gamma, beta, 1e-5),
                rtol=1e-12,
            )
            out_py = py.bn_backward_core(cs, g, loc, scale, gamma, 1e-5)
            out_cy = compiled.bn_backward_core(cs, g, loc, scale, gamma, 1e-5)
            for a, b in zip(out_py, out_cy):
                np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-13)

    def test_stats_backward_paths(self):
        rng = np.random.default_rng(14)
        cs = random_cs(rng, c=3, n=11)
        dloc = rng.standard_normal(3)
        dscale = rng.standard_normal(3)
        cur_loc, _ = py.tebn_stats(cs)
        dz1 = np.zeros_like(cs)
        dz2 = np.zeros_like(cs)
        py.tebn_stats_backward(cs, cur_loc, dloc, dscale, dz1)
        compiled.tebn_stats_backward(cs, cur_loc, dloc, dscale, dz2)
        np.testing.assert_allclose(dz1, dz2, rtol=1e-12, atol=1e-14)

        eta, _, sel = py.medbn_stats(cs)
        dz1[:] = 0
        dz2[:] = 0
        py.medbn_stats_backward(cs, eta, sel, dloc, dscale, dz1)
        compiled.medbn_stats_backward(cs, eta, sel, dloc, dscale, dz2)
        np.testing.assert_allclose(dz1, dz2, rtol=1e-12, atol=1e-14)

        eta, mad, sel_eta, sel_dev = py.mad_stats(cs)
        dz1[:] = 0
        dz2[:] = 0
        py.mad_stats_backward(cs, eta, mad, sel_eta, sel_dev, dloc, dscale, dz1)
        compiled.mad_stats_backward(cs, eta, mad, sel_eta, sel_dev, dloc,
                                    dscale, dz2)
        np.testing.assert_allclose(dz1, dz2, rtol=1e-12, atol=1e-14)

    def test_quickselect_adversarial_patterns(self):
        # sorted, reverse-sorted, constant, few distinct values
        patterns = [
            np.arange(100.0),
            np.arange(100.0)[::-1].copy(),
            np.zeros(100),
            np.tile([3.0, 1.0, 2.0], 34)[:100],
        ]
        for row in patterns:
            cs = np.ascontiguousarray(row[None, :])
            v1, s1 = py.channel_median(cs)
            v2, s2 = compiled.channel_median(cs)
            assert v1[0] == v2[0]
            assert s1[0] == s2[0]

    def test_set_backend_roundtrip(self):
        prev = kernels.set_backend("python")
        try:
            assert kernels.backend_name == "python"
            cs = np.array([[1.0, 2.0, 3.0]])
            loc, var = kernels.tebn_stats(cs)
            np.testing.assert_allclose(loc, [2.0])
            np.testing.assert_allclose(var, [2.0 / 3.0])
        finally:
            kernels.set_backend(prev)

    def test_unknown_backend_rejected(self):
        with pytest.raises(ValueError):
            kernels.set_backend("fortran")
