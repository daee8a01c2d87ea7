"""Wiring masks, sensory gates, the coefficient backbone, and time squashing."""

import math

import numpy as np
import pytest

from nsac.autodiff import Rng, Tensor, backward, finite_difference_grad, tanh
from nsac.errors import DomainError, ValidationError
from nsac.gating import (
    MaskedLinear,
    TimeParams,
    WiringMask,
    backbone_forward,
    build_wiring,
    init_masked_linear,
    normalized_time,
    sensory_project,
)
from nsac.optim import AdamW


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def make_backbone(d_pair, d_model, sparsity, seed):
    rng = Rng(seed)
    trunk = (
        init_masked_linear(d_pair, d_model, sparsity, seed, rng.child(1)),
        init_masked_linear(d_model, d_model // 2, sparsity, seed, rng.child(2)),
    )
    heads = tuple(
        init_masked_linear(d_model // 2, 1, sparsity, seed, rng.child(3 + i)) for i in range(3)
    )
    return trunk, heads


class TestWiring:
    def test_half_sparse_counts(self):
        w = build_wiring(8, 8, 0.5, seed=3)
        zeros = int((w.mask == 0).sum())
        assert 31 <= zeros <= 33
        assert np.all(w.mask.sum(axis=0) >= 1)
        assert set(np.unique(w.mask)) <= {0.0, 1.0}

    def test_nearly_dense_limit(self):
        w = build_wiring(64, 64, 0.01, seed=0)
        assert int((w.mask == 0).sum()) <= round(0.01 * 64 * 64)

    def test_same_seed_identical(self):
        a = build_wiring(12, 20, 0.5, seed=9)
        b = build_wiring(12, 20, 0.5, seed=9)
        assert np.array_equal(a.mask, b.mask)
        assert not np.array_equal(a.mask, build_wiring(12, 20, 0.5, seed=10).mask)

    def test_repair_keeps_every_output_connected(self):
        w = build_wiring(16, 4, 0.97, seed=1)
        assert np.all(w.mask.sum(axis=0) >= 1)

    def test_mask_is_immutable(self):
        w = build_wiring(4, 4, 0.5, seed=0)
        with pytest.raises(ValueError):
            w.mask[0, 0] = 1.0

    def test_sparsity_validation(self):
        for bad in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(DomainError):
                build_wiring(4, 4, bad, seed=0)


class TestSensory:
    def _gates(self, d_in=6, d_out=8, seed=5):
        rng = Rng(seed)
        return tuple(init_masked_linear(d_in, d_out, 0.5, seed, rng.child(i)) for i in range(3))

    def test_zero_input_zero_output(self):
        gates = self._gates()
        q, k, v = sensory_project(Tensor(np.zeros((3, 6))), gates)
        for out in (q, k, v):
            np.testing.assert_array_equal(out.data, 0.0)

    def test_dense_mask_reduces_to_linear_tanh(self):
        rng = Rng(7)
        gate = init_masked_linear(5, 4, 0.5, 7, rng.child(0))
        dense = MaskedLinear(
            weight=gate.weight,
            bias=gate.bias,
            wiring=WiringMask(np.ones((5, 4)), 0.5, 0),
        )
        x = rng.normal((2, 5))
        got = tanh(dense(Tensor(x))).data
        want = np.tanh(x @ gate.weight.data + gate.bias.data)
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_masked_gradients_are_zero(self):
        gates = self._gates()
        x = Tensor(Rng(8).normal((4, 6)))
        q, k, v = sensory_project(x, gates)
        backward((q * q).sum() + k.sum() + v.mean())
        for g in gates:
            dead = g.wiring.mask == 0
            np.testing.assert_array_equal(g.weight.grad[dead], 0.0)

    def test_masked_entry_has_no_effect(self):
        gate = self._gates()[0]
        dead = np.argwhere(gate.wiring.mask == 0)[0]
        x = Rng(9).normal((3, 6))

        def f(w):
            shadow = MaskedLinear(weight=w, bias=gate.bias, wiring=gate.wiring)
            return (tanh(shadow(Tensor(x))) ** 2.0).sum()

        fd = finite_difference_grad(f, Tensor(gate.weight.data))
        assert fd[tuple(dead)] == 0.0

    def test_live_gradients_match_fd(self):
        gate = self._gates()[1]
        x = Rng(10).normal((3, 6))

        def f(w):
            shadow = MaskedLinear(weight=w, bias=gate.bias, wiring=gate.wiring)
            return (tanh(shadow(Tensor(x))) ** 2.0).sum()

        w = Tensor(gate.weight.data.copy(), requires_grad=True)
        backward(f(w))
        assert rel_err(w.grad, finite_difference_grad(f, Tensor(gate.weight.data))) < 1e-4

    def test_shape_mismatch_rejected(self):
        gates = self._gates(d_in=6)
        with pytest.raises(ValidationError):
            sensory_project(Tensor(np.zeros((2, 5))), gates)


class TestBackbone:
    def test_output_ranges(self):
        trunk, heads = make_backbone(8, 16, 0.5, seed=11)
        u = Tensor(Rng(12).normal((50, 8)) * 5.0)
        g = backbone_forward(u, trunk, heads, t=Tensor(np.full(50, 0.5)))
        assert np.all(g.kappa.data >= 1e-3)
        assert np.all(g.psi.data >= 1e-3)
        assert np.all(np.abs(g.phi.data) < 1.0)

    def test_ranges_survive_saturation(self):
        trunk, heads = make_backbone(8, 16, 0.5, seed=11)
        for layer in (*trunk, *heads):
            layer.weight.data *= 40.0
        u = Tensor(Rng(12).normal((50, 8)) * 5.0)
        g = backbone_forward(u, trunk, heads, t=Tensor(np.full(50, 0.5)))
        assert np.all(g.kappa.data >= 1e-3)
        assert np.all(g.psi.data >= 1e-3)
        # tanh can round to the closed bound in float64 but never beyond
        assert np.all(np.abs(g.phi.data) <= 1.0)

    def test_custom_floors(self):
        trunk, heads = make_backbone(8, 16, 0.5, seed=11)
        u = Tensor(Rng(12).normal((5, 8)))
        g = backbone_forward(u, trunk, heads, t=Tensor(np.zeros(5)), kappa_min=0.2, psi_min=0.3)
        assert np.all(g.kappa.data >= 0.2)
        assert np.all(g.psi.data >= 0.3)

    def test_shared_trunk_touches_all_heads(self):
        trunk, heads = make_backbone(8, 16, 0.5, seed=13)
        u = Rng(14).normal((6, 8))
        live = np.argwhere(trunk[0].wiring.mask == 1)[3]

        def outputs(weight_val):
            w = trunk[0].weight.data.copy()
            w[tuple(live)] = weight_val
            shadow = (MaskedLinear(Tensor(w), trunk[0].bias, trunk[0].wiring), trunk[1])
            g = backbone_forward(Tensor(u), shadow, heads, t=Tensor(np.zeros(6)))
            return g.kappa.data.sum(), g.phi.data.sum(), g.psi.data.sum()

        base_w = trunk[0].weight.data[tuple(live)]
        lo = outputs(base_w - 0.05)
        hi = outputs(base_w + 0.05)
        for a, b in zip(lo, hi):
            assert abs(a - b) > 1e-9

    def test_gradients_match_fd(self):
        trunk, heads = make_backbone(6, 8, 0.5, seed=15)
        u0 = Rng(16).normal((4, 6))

        def f(w):
            shadow = (MaskedLinear(w, trunk[0].bias, trunk[0].wiring), trunk[1])
            g = backbone_forward(Tensor(u0), shadow, heads, t=Tensor(np.zeros(4)))
            return (g.kappa + g.phi * 2.0 + g.psi).sum()

        w = Tensor(trunk[0].weight.data.copy(), requires_grad=True)
        backward(f(w))
        assert rel_err(w.grad, finite_difference_grad(f, Tensor(trunk[0].weight.data))) < 1e-4


class TestNormalizedTime:
    def _params(self, t_a, t_b):
        return TimeParams(t_a=Tensor(np.atleast_1d(t_a)), t_b=Tensor(np.atleast_1d(t_b)))

    def test_zero_params_give_half(self):
        out = normalized_time(7.3, self._params(0.0, 0.0))
        np.testing.assert_allclose(out.data, 0.5, atol=1e-15)

    def test_large_offset_saturates(self):
        out = normalized_time(1.0, self._params(1.0, 40.0))
        assert out.data[0] > 1.0 - 1e-12

    def test_frozen_value(self):
        out = normalized_time(1.0, self._params(1.0, 0.0))
        direct = 1.0 / (1.0 + math.exp(1.0))
        assert abs(direct - 0.2689414213699951) < 1e-15
        assert abs(out.data[0] - direct) < 1e-15

    def test_per_head_per_token_shape(self):
        p = self._params([1.0, 2.0, 0.5], [0.0, 0.1, -0.1])
        out = normalized_time(np.array([0.0, 0.5, 1.0, 2.0]), p)
        assert out.shape == (3, 4)
        assert np.all((out.data >= 0.0) & (out.data <= 1.0))

    def test_rejects_negative_or_nonfinite(self):
        p = self._params(1.0, 0.0)
        with pytest.raises(DomainError):
            normalized_time(-0.5, p)
        with pytest.raises(DomainError):
            normalized_time(float("nan"), p)


class TestSparsityConservation:
    def test_masked_weights_stay_zero_through_updates(self):
        rng = Rng(17)
        gate = init_masked_linear(6, 8, 0.5, 17, rng.child(0))
        gate.weight.data *= gate.wiring.mask  # dead entries start at zero
        opt = AdamW(gate.parameters(), lr=0.05, weight_decay=0.01)
        x = rng.normal((10, 6))
        y = rng.normal((10, 8))
        for _ in range(25):
            opt.zero_grad()
            out = tanh(gate(Tensor(x)))
            backward(((out - y) ** 2.0).mean())
            opt.step()
        dead = gate.wiring.mask == 0
        np.testing.assert_array_equal(gate.weight.data[dead], 0.0)
        assert np.any(gate.weight.data[~dead] != 0.0)
