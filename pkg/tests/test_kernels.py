import math
import subprocess
import sys

import numpy as np
import pytest

from cellfree_maxmin import kernels
from conftest import make_model, random_feasible_matrix

pytestmark = pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")


@pytest.fixture(scope="module")
def parity_cases():
    rng = np.random.default_rng(0)
    cases = []
    for seed, (m, n, k) in enumerate([(6, 2, 2), (17, 3, 4), (40, 2, 7)]):
        model = make_model(m, n, k, seed=seed)
        mat = random_feasible_matrix(model, rng)
        cases.append((model, mat))
    return cases


def _args(model, mat):
    return model.gamma_sqrt, model.a_sq, model.group_ptr, mat, model.rho_bar


class TestBackendParity:
    def test_user_rates(self, parity_cases):
        for model, mat in parity_cases:
            a = kernels.NUMPY_IMPL.user_rates(*_args(model, mat))
            b = kernels.NUMBA_IMPL.user_rates(*_args(model, mat))
            np.testing.assert_allclose(a, b, rtol=1e-12)

    def test_soft_min_value_and_grad(self, parity_cases):
        for model, mat in parity_cases:
            fa, ra = kernels.NUMPY_IMPL.soft_min_value(*_args(model, mat), 100.0)
            fb, rb = kernels.NUMBA_IMPL.soft_min_value(*_args(model, mat), 100.0)
            assert fa == pytest.approx(fb, rel=1e-12)
            assert ra == pytest.approx(rb, rel=1e-12)
            fa, ra, ga = kernels.NUMPY_IMPL.soft_min_value_grad(*_args(model, mat), 100.0)
            fb, rb, gb = kernels.NUMBA_IMPL.soft_min_value_grad(*_args(model, mat), 100.0)
            assert fa == pytest.approx(fb, rel=1e-12)
            np.testing.assert_allclose(ga, gb, rtol=1e-10, atol=1e-14)

    def test_projection(self, parity_cases):
        rng = np.random.default_rng(1)
        for model, _ in parity_cases:
            x = rng.normal(size=(model.num_groups, model.num_aps))
            a = kernels.NUMPY_IMPL.project_ball_orthant(x)
            b = kernels.NUMBA_IMPL.project_ball_orthant(x)
            np.testing.assert_allclose(a, b, rtol=1e-14, atol=0)

    def test_soc_and_margin(self, parity_cases):
        for model, mat in parity_cases:
            for t in (0.05, 0.4, 1.3):
                a = kernels.NUMPY_IMPL.soc_residuals(*_args(model, mat), t)
                b = kernels.NUMBA_IMPL.soc_residuals(*_args(model, mat), t)
                np.testing.assert_allclose(a, b, rtol=1e-12)
                fa, ma = kernels.NUMPY_IMPL.margin_value(*_args(model, mat), t, 500.0)
                fb, mb = kernels.NUMBA_IMPL.margin_value(*_args(model, mat), t, 500.0)
                assert fa == pytest.approx(fb, rel=1e-11)
                assert ma == pytest.approx(mb, rel=1e-11)
                fa, ma, ga = kernels.NUMPY_IMPL.margin_value_grad(*_args(model, mat), t, 500.0)
                fb, mb, gb = kernels.NUMBA_IMPL.margin_value_grad(*_args(model, mat), t, 500.0)
                np.testing.assert_allclose(ga, gb, rtol=1e-10, atol=1e-14)

    def test_apg_step(self, parity_cases):
        model, mat = parity_cases[0]
        args = (model.gamma_sqrt, model.a_sq, model.group_ptr, model.rho_bar, 100.0,
                mat, mat, mat, 1.0, 1.0, 1.0, 1.0, 1e-5, 0.45, 60)
        out_np = kernels.NUMPY_IMPL.rate_apg_step(*args)
        out_nb = kernels.NUMBA_IMPL.rate_apg_step(*args)
        np.testing.assert_allclose(out_np[0], out_nb[0], rtol=1e-10, atol=1e-14)
        assert out_np[2] == pytest.approx(out_nb[2], rel=1e-10)
        assert out_np[6] == out_nb[6] and out_np[7] == out_nb[7]
        assert out_np[8] == out_nb[8]


class TestDispatch:
    def test_resolve(self):
        assert kernels.resolve_backend("numpy") == "numpy"
        assert kernels.resolve_backend("numba") == "numba"
        assert kernels.resolve_backend("auto") == "numba"
        with pytest.raises(ValueError):
            kernels.resolve_backend("cuda")

    def test_get_impl(self):
        assert kernels.get_impl("numpy").name == "numpy"
        assert kernels.get_impl("numba").name == "numba"

    def test_env_flag_controls_import(self):
        code = (
            "import cellfree_maxmin as cm; print(cm.active_backend())"
        )
        for flag, expect in (("numpy", "numpy"), ("numba", "numba"), ("auto", "numba")):
            out = subprocess.run(
                [sys.executable, "-c", code],
                capture_output=True,
                text=True,
                env={"PATH": "/usr/bin:/bin", "CELLFREE_MAXMIN_BACKEND": flag,
                     "HOME": "/root"},
            )
            assert out.returncode == 0, out.stderr
            assert out.stdout.strip() == expect


class TestSoftMinHelper:
    def test_equal_values_identity(self):
        assert kernels.soft_min(np.full(7, 1.25), sigma=100.0) == 1.25

    def test_hand_value(self):
        # two values {0, 1} at sigma = 1: -ln((1 + e^-1)/2)
        expected = -math.log(0.5 * (1.0 + math.exp(-1.0)))
        assert kernels.soft_min([0.0, 1.0], 1.0) == pytest.approx(expected, rel=1e-15)
        assert expected == pytest.approx(0.3799, abs=1e-4)

    def test_sandwich(self):
        rng = np.random.default_rng(2)
        vals = rng.uniform(0.0, 2.0, size=11)
        for sigma in (10.0, 1e4):
            s = kernels.soft_min(vals, sigma)
            assert vals.min() <= s <= vals.min() + math.log(len(vals)) / sigma
