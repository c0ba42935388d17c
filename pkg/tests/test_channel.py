import numpy as np
import pytest

from tegamp.channel import (
    ChannelModel,
    ObservationMask,
    PriorModel,
    estimate_noise_variance,
    field_output_and_residual,
    input_posterior,
    omega,
    output_moments,
    residual_step,
)
from tegamp.tensors import DenseTensor, Shape

from oracles import gaussian_pdf, gh_posterior_moments


def awgn(nu_w, dims=(2, 2)):
    return ChannelModel(nu_w, ObservationMask.full(Shape(dims)))


class TestNoiseEstimate:
    def test_all_ones_full(self):
        v = DenseTensor.from_array(np.ones((2, 2, 2)))
        m = ObservationMask.full(Shape((2, 2, 2)))
        assert estimate_noise_variance(v, m, snr=100) == pytest.approx(1 / 101)

    def test_zero_tensor(self):
        v = DenseTensor.from_array(np.zeros((2, 3)))
        m = ObservationMask.full(Shape((2, 3)))
        assert estimate_noise_variance(v, m) == 0.0

    def test_half_observed_matches_direct_sum(self):
        arr = np.arange(24.0).reshape(2, 3, 4)
        keep = np.zeros((2, 3, 4), dtype=bool)
        keep.ravel()[::2] = True
        v = DenseTensor.from_array(arr)
        m = ObservationMask(keep)
        expect = (arr[keep] ** 2).sum() / (101 * keep.sum())
        assert estimate_noise_variance(v, m, snr=100) == pytest.approx(expect)

    def test_empty_mask_rejected(self):
        v = DenseTensor.from_array(np.ones((2, 2)))
        m = ObservationMask(np.zeros((2, 2), dtype=bool))
        with pytest.raises(ValueError):
            estimate_noise_variance(v, m)


class TestOutputMoments:
    def test_missing_entry_passthrough(self):
        u, nu = output_moments(None, 0.3, 2.0, awgn(1.0))
        assert (u, nu) == (0.3, 2.0)

    def test_noiseless_clamp(self):
        u, nu = output_moments(5.0, -3.7, 4.0, awgn(0.0))
        assert u == 5.0 and nu == 0.0

    def test_unit_case_and_quadrature(self):
        u, nu = output_moments(1.0, 0.0, 1.0, awgn(1.0))
        assert (u, nu) == (0.5, 0.5)
        q_mean, q_var = gh_posterior_moments(
            lambda x: gaussian_pdf(1.0, x, 1.0), 0.0, 1.0
        )
        assert u == pytest.approx(q_mean, abs=1e-6)
        assert nu == pytest.approx(q_var, abs=1e-6)

    def test_quadrature_grid(self):
        # Closed form vs quadrature of the posterior integral on a grid.
        ch = awgn(0.5)
        for p_hat in [-2.0, -0.5, 0.0, 0.7, 3.0]:
            for nu_p in [0.1, 0.5, 1.0, 2.0, 10.0]:
                u, nu = output_moments(1.3, p_hat, nu_p, ch)
                qm, qv = gh_posterior_moments(
                    lambda x: gaussian_pdf(1.3, x, 0.5), p_hat, nu_p
                )
                assert u == pytest.approx(qm, abs=1e-6)
                assert nu == pytest.approx(qv, abs=1e-6)

    def test_invalid_variance(self):
        with pytest.raises(ValueError):
            output_moments(1.0, 0.0, 0.0, awgn(1.0))

    def test_variance_contraction(self):
        for nu_p in [0.01, 0.5, 3.0, 100.0]:
            for nu_w in [0.0, 0.2, 5.0]:
                _, nu_u = output_moments(0.3, 1.0, nu_p, awgn(nu_w))
                assert nu_u <= nu_p + 1e-15


class TestResidualStep:
    def test_missing_entry_exact_zero(self):
        assert residual_step(None, 1.0, 2.0, awgn(1.0)) == (0.0, 0.0)

    def test_zero_residual(self):
        s, nu = residual_step(1.5, 1.5, 2.0, awgn(0.5))
        assert s == 0.0
        assert nu == pytest.approx(1 / 2.5)

    def test_two_path_consistency(self):
        # AWGN shortcut vs general formula via output_moments.
        ch = awgn(1.0)
        v, p_hat, nu_p = 2.0, 1.0, 1.0
        s, nu = residual_step(v, p_hat, nu_p, ch)
        assert (s, nu) == (0.5, 0.5)
        u, nu_u = output_moments(v, p_hat, nu_p, ch)
        assert s == pytest.approx((u - p_hat) / nu_p, abs=1e-14)
        assert nu == pytest.approx((1 - nu_u / nu_p) / nu_p, abs=1e-14)


class TestOmega:
    def test_values(self):
        assert omega(0.0, 0.0) == 0.0
        assert omega(2.0, 1.0) == 3.0

    def test_missing_entries_compose_to_zero(self):
        s, nu = residual_step(None, 0.4, 1.0, awgn(1.0))
        assert omega(s, nu) == 0.0


class TestInputPosterior:
    def test_uninformative_observation(self):
        m, v = input_posterior(123.0, 1e12, PriorModel(0.0, 1.0))
        assert m == pytest.approx(0.0, abs=1e-6)
        assert v == pytest.approx(1.0, abs=1e-6)

    def test_conjugate_unit_case(self):
        m, v = input_posterior(1.0, 1.0, PriorModel(0.0, 1.0))
        assert (m, v) == (0.5, 0.5)
        qm, qv = gh_posterior_moments(
            lambda x: gaussian_pdf(x, 0.0, 1.0), 1.0, 1.0
        )
        assert m == pytest.approx(qm, abs=1e-6)
        assert v == pytest.approx(qv, abs=1e-6)

    def test_symmetric_agreement(self):
        m, v = input_posterior(2.0, 4.0, PriorModel(2.0, 4.0))
        assert (m, v) == (2.0, 2.0)

    def test_quadrature_grid(self):
        prior = PriorModel(0.3, 2.0)
        for r in [-3.0, -1.0, 0.0, 0.5, 2.0]:
            for nu in [0.05, 0.3, 1.0, 4.0, 20.0]:
                m, v = input_posterior(r, nu, prior)
                qm, qv = gh_posterior_moments(
                    lambda x: gaussian_pdf(x, 0.3, 2.0), r, nu
                )
                assert m == pytest.approx(qm, abs=1e-6)
                assert v == pytest.approx(qv, abs=1e-6)

    def test_derivative_identity(self):
        # nu_r * g'(r, nu_r) equals the posterior variance; g' checked by
        # central differences.
        prior = PriorModel(0.5, 1.5)
        h = 1e-5
        for r in [-1.0, 0.0, 2.0]:
            for nu in [0.2, 1.0, 5.0]:
                _, v = input_posterior(r, nu, prior)
                gp, _ = input_posterior(r + h, nu, prior)
                gm, _ = input_posterior(r - h, nu, prior)
                deriv = (gp - gm) / (2 * h)
                assert nu * deriv == pytest.approx(v, rel=1e-6)

    def test_posterior_variance_contraction(self):
        prior = PriorModel(0.0, 2.0)
        for nu in [0.01, 1.0, 50.0]:
            _, v = input_posterior(3.0, nu, prior)
            assert v <= min(prior.var, nu) + 1e-15

    def test_invalid_variance(self):
        with pytest.raises(ValueError):
            input_posterior(0.0, -1.0, PriorModel())

    def test_array_inputs(self):
        r = np.array([0.0, 1.0, -2.0])
        m, v = input_posterior(r, np.array([1.0, 1.0, 1.0]), PriorModel(0.0, 1.0))
        assert np.allclose(m, r / 2)
        assert np.allclose(v, 0.5)


class TestFieldChannel:
    def test_matches_scalar_paths(self):
        v = np.array([[1.0, -2.0], [0.5, 3.0]])
        obs = np.array([[True, False], [True, True]])
        p_hat = np.array([[0.2, 0.4], [-1.0, 2.0]])
        nu_p = np.array([[0.5, 1.5], [2.0, 0.1]])
        ch = ChannelModel(0.7, ObservationMask(obs))
        u, nu_u, s, nu_s = field_output_and_residual(v, obs, p_hat, nu_p, 0.7)
        for idx in np.ndindex(2, 2):
            vi = v[idx] if obs[idx] else None
            eu, enu = output_moments(vi, p_hat[idx], nu_p[idx], ch)
            es, ens = residual_step(vi, p_hat[idx], nu_p[idx], ch)
            assert u[idx] == pytest.approx(eu, abs=1e-14)
            assert nu_u[idx] == pytest.approx(enu, abs=1e-14)
            assert s[idx] == pytest.approx(es, abs=1e-14)
            assert nu_s[idx] == pytest.approx(ens, abs=1e-14)

    def test_off_mask_exact_zero(self):
        obs = np.zeros((3, 3), dtype=bool)
        u, nu_u, s, nu_s = field_output_and_residual(
            np.ones((3, 3)), obs, np.full((3, 3), 0.3), np.full((3, 3), 2.0), 1.0
        )
        assert np.all(s == 0.0) and np.all(nu_s == 0.0)
        assert np.all(u == 0.3) and np.all(nu_u == 2.0)
