"""Objective behavior: NLL values and gradients, perturbation statistics,
regularizer algebra, the differentiable ensemble-variance reduction, and
train-step determinism."""

import math

import numpy as np
import pytest
from scipy.stats import norm

from nsac.autodiff import Rng, Tensor, backward, finite_difference_grad
from nsac.errors import DomainError, NumericError, ValidationError
from nsac.layer import MCEnsemble, NsacConfig, NsacLayer, NsacRegressor
from nsac.losses import (
    LossBreakdown,
    OodParams,
    ensemble_nll,
    epistemic_reg,
    gaussian_nll,
    member_mean_variance,
    objective,
    perturb_ood,
    train_step,
)
from nsac.optim import AdamW

HALF_LOG_2PI = 0.9189385332046727


def small_model(seed=37, deterministic=False):
    cfg = NsacConfig(d_model=8, num_heads=2, top_k=2, sparsity=0.4, seed=seed,
                     d_in=3, deterministic=deterministic)
    return NsacRegressor(NsacLayer(cfg), out_dim=2)


class TestGaussianNll:
    def test_perfect_prediction_frozen_value(self):
        val = gaussian_nll(np.zeros(4), Tensor(np.zeros(4)), Tensor(np.zeros(4)))
        assert float(val.data) == pytest.approx(HALF_LOG_2PI, abs=1e-12)

    def test_unit_error_frozen_value(self):
        val = gaussian_nll(np.ones(3), Tensor(np.zeros(3)), Tensor(np.zeros(3)))
        assert float(val.data) == pytest.approx(HALF_LOG_2PI + 0.5, abs=1e-12)

    def test_mu_gradient_is_minus_one(self):
        mu = Tensor(np.zeros(1), requires_grad=True)
        backward(gaussian_nll(np.ones(1), mu, Tensor(np.zeros(1))))
        assert mu.grad[0] == pytest.approx(-1.0, abs=1e-12)
        fd = finite_difference_grad(
            lambda t: gaussian_nll(np.ones(1), t, Tensor(np.zeros(1))), mu)
        assert fd[0] == pytest.approx(-1.0, abs=1e-8)

    def test_matches_negated_gaussian_log_density(self):
        rng = Rng(2)
        y = rng.normal((50,))
        mu = rng.normal((50,))
        s = rng.normal((50,)) * 0.5
        val = gaussian_nll(y, Tensor(mu), Tensor(s))
        ref = -np.mean(norm.logpdf(y, loc=mu, scale=np.exp(s)))
        assert float(val.data) == pytest.approx(ref, rel=1e-10)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            gaussian_nll(np.zeros(3), Tensor(np.zeros(4)), Tensor(np.zeros(4)))

    def test_gradients_against_finite_differences(self):
        rng = Rng(3)
        y = rng.normal((6,))
        mu = Tensor(rng.normal((6,)), requires_grad=True)
        s = Tensor(rng.normal((6,)) * 0.3, requires_grad=True)
        backward(gaussian_nll(y, mu, s))
        fd_mu = finite_difference_grad(lambda t: gaussian_nll(y, t, Tensor(s.data)), mu)
        fd_s = finite_difference_grad(lambda t: gaussian_nll(y, Tensor(mu.data), t), s)
        assert np.allclose(mu.grad, fd_mu, rtol=1e-6, atol=1e-9)
        assert np.allclose(s.grad, fd_s, rtol=1e-6, atol=1e-9)


class TestPerturbOod:
    def test_vanishing_scale_approaches_identity(self):
        x = Rng(4).normal((5, 3))
        out = perturb_ood(x, OodParams(mu_pert=0.0, sigma_pert=1e-12), Rng(5))
        assert np.allclose(out, x, atol=1e-10)

    def test_pure_shift(self):
        x = Rng(6).normal((5, 3))
        out = perturb_ood(x, OodParams(mu_pert=5.0, sigma_pert=1e-12), Rng(7))
        assert np.allclose(out - x, 5.0, atol=1e-10)

    def test_moment_statistics_within_three_standard_errors(self):
        n = 100_000
        x = np.zeros(n)
        p = OodParams(mu_pert=-0.7, sigma_pert=2.5)
        diff = perturb_ood(x, p, Rng(8)) - x
        se_mean = p.sigma_pert / math.sqrt(n)
        se_std = p.sigma_pert / math.sqrt(2 * n)
        assert abs(diff.mean() - p.mu_pert) <= 3 * se_mean
        assert abs(diff.std(ddof=1) - p.sigma_pert) <= 3 * se_std

    def test_fresh_noise_each_call(self):
        x = np.zeros((4, 2))
        rng = Rng(9)
        a = perturb_ood(x, OodParams(), rng)
        b = perturb_ood(x, OodParams(), rng)
        assert not np.array_equal(a, b)

    def test_nonpositive_sigma_rejected(self):
        with pytest.raises(DomainError):
            OodParams(sigma_pert=0.0)

    def test_nonfinite_input_rejected(self):
        with pytest.raises(NumericError):
            perturb_ood(np.array([np.nan]), OodParams(), Rng(10))


class TestEpistemicReg:
    def test_zero_id_variance_gives_zero(self):
        assert epistemic_reg(0.0, 0.3) == 0.0

    def test_equal_variances_approach_log_two(self):
        assert epistemic_reg(1.0, 1.0, eps=1e-8) == pytest.approx(math.log(2.0), rel=1e-7)

    def test_frozen_quarter_ratio(self):
        val = epistemic_reg(0.02, 0.08, eps=1e-8)
        assert val == pytest.approx(math.log(1.25), rel=1e-6)
        assert val == pytest.approx(math.log1p(0.02 / (0.08 + 1e-8)), rel=1e-15)

    def test_strictly_decreasing_in_ood_variance(self):
        vals = [epistemic_reg(0.5, v) for v in np.linspace(0.01, 5.0, 40)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_tensor_path_matches_scalar_path_and_differentiates(self):
        vi = Tensor(np.array(0.02), requires_grad=True)
        vo = Tensor(np.array(0.08), requires_grad=True)
        out = epistemic_reg(vi, vo)
        assert float(out.data) == pytest.approx(epistemic_reg(0.02, 0.08), rel=1e-14)
        backward(out)
        fd = finite_difference_grad(lambda t: epistemic_reg(t, Tensor(vo.data)), vi)
        assert vi.grad == pytest.approx(fd, rel=1e-5)

    def test_negative_variance_rejected(self):
        with pytest.raises(DomainError):
            epistemic_reg(-0.1, 0.5)
        with pytest.raises(DomainError):
            epistemic_reg(Tensor(np.array(0.1)), Tensor(np.array(-0.5)))
        with pytest.raises(DomainError):
            epistemic_reg(0.1, 0.5, eps=0.0)


class TestMemberVariance:
    def build(self, n=5, shape=(3, 2), seed=11):
        rng = Rng(seed)
        means = [Tensor(rng.normal(shape), requires_grad=True) for _ in range(n)]
        stds = [Tensor(rng.normal(shape)) for _ in range(n)]
        return MCEnsemble(means=means, log_stds=stds)

    def test_matches_numpy_population_variance(self):
        ens = self.build()
        val = member_mean_variance(ens)
        stacked = np.stack([m.data for m in ens.means])
        assert float(val.data) == pytest.approx(np.var(stacked, axis=0).mean(), rel=1e-12)

    def test_mean_then_var_flag(self):
        ens = self.build()
        val = member_mean_variance(ens, reduce="mean_then_var")
        scalars = np.array([m.data.mean() for m in ens.means])
        assert float(val.data) == pytest.approx(np.var(scalars), rel=1e-12)

    def test_bad_reduce_rejected(self):
        with pytest.raises(ValidationError):
            member_mean_variance(self.build(), reduce="median")

    def test_gradient_flows_to_members(self):
        ens = self.build(n=3)
        backward(member_mean_variance(ens))
        fd = finite_difference_grad(
            lambda t: member_mean_variance(
                MCEnsemble(means=[t] + ens.means[1:], log_stds=ens.log_stds)),
            ens.means[0],
        )
        assert np.allclose(ens.means[0].grad, fd, rtol=1e-5, atol=1e-9)


class TestObjectiveAndTrainStep:
    def batch(self, seed=12):
        rng = Rng(seed)
        x = rng.normal((2, 6, 3))
        y = rng.normal((2, 6, 2))
        return x, y

    def test_lambda_zero_total_equals_nll_exactly(self):
        model = small_model()
        x, y = self.batch()
        total, bd = objective(model, x, y, 3, OodParams(), 0.0, Rng(13))
        assert bd.total == bd.nll
        assert bd.reg == 0.0 and bd.var_ood == 0.0
        assert float(total.data) == bd.nll

    def test_breakdown_identity_holds(self):
        model = small_model()
        x, y = self.batch()
        total, bd = objective(model, x, y, 3, OodParams(), 0.25, Rng(14))
        assert abs(bd.total - (bd.nll + bd.lam * bd.reg)) <= 1e-12
        assert float(total.data) == pytest.approx(bd.total, abs=1e-12)
        assert bd.var_id >= 0.0 and bd.var_ood >= 0.0

    def test_inconsistent_breakdown_rejected(self):
        with pytest.raises(ValidationError):
            LossBreakdown(nll=1.0, reg=1.0, total=3.0, lam=0.5, var_id=0.0,
                          var_ood=0.0)

    def test_ensemble_nll_averages_members(self):
        model = small_model()
        x, y = self.batch()
        ens = model.mc_predict(x, 3, Rng(15))
        val = ensemble_nll(y, ens)
        parts = [float(gaussian_nll(y, m, s).data)
                 for m, s in zip(ens.means, ens.log_stds)]
        assert float(val.data) == pytest.approx(np.mean(parts), rel=1e-12)

    def test_same_seed_steps_are_identical(self):
        x, y = self.batch()
        results = []
        for _ in range(2):
            model = small_model(seed=41)
            opt = AdamW(model.parameters())
            bd = train_step((x, y), model, opt, 3, OodParams(), 0.1, Rng(16))
            results.append((bd, [p.data.copy() for p in model.parameters()]))
        assert results[0][0] == results[1][0]
        assert all(np.array_equal(a, b)
                   for a, b in zip(results[0][1], results[1][1]))

    def test_step_moves_parameters_and_clears_grads(self):
        model = small_model(seed=43)
        before = [p.data.copy() for p in model.parameters()]
        opt = AdamW(model.parameters())
        x, y = self.batch()
        train_step((x, y), model, opt, 2, OodParams(), 0.1, Rng(17))
        assert any(not np.array_equal(a, p.data)
                   for a, p in zip(before, model.parameters()))
        assert all(p.grad is None for p in model.parameters())

    def test_nan_loss_aborts_without_update(self):
        model = small_model(seed=44)
        model.layer.out_bias.data[0] = 1e308  # drives exp(2s) to overflow
        before = [p.data.copy() for p in model.parameters()]
        opt = AdamW(model.parameters())
        x, y = self.batch()
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(NumericError, match="nll|output"):
                train_step((x, y), model, opt, 2, OodParams(), 0.1, Rng(18))
        assert all(np.array_equal(a, p.data)
                   for a, p in zip(before, model.parameters()))

    def test_negative_lambda_rejected(self):
        model = small_model()
        x, y = self.batch()
        with pytest.raises(ValidationError):
            objective(model, x, y, 2, OodParams(), -0.1, Rng(19))

    def test_objective_gradients_match_finite_differences_frozen_noise(self):
        model = small_model(seed=47)
        x, y = self.batch(seed=20)

        def loss_fn():
            total, _ = objective(model, x, y, 2, OodParams(sigma_pert=1.0),
                                 0.1, Rng(21))
            return total

        total = loss_fn()
        from nsac.autodiff import backward as bw
        bw(total)

        def loss_with(p, arr):
            saved = p.data
            p.data = arr
            try:
                return loss_fn()
            finally:
                p.data = saved

        for p in (model.layer.sensory[0].weight, model.layer.time.t_a,
                  model.layer.out_weight):
            fd = finite_difference_grad(lambda t, p=p: loss_with(p, t.data), p)
            num = np.linalg.norm(p.grad - fd)
            den = max(np.linalg.norm(fd), 1e-10)
            assert num / den < 1e-3
