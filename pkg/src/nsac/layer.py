"""The stochastic attention layer.

One forward pass, per head: curate top-K keys for every query, run each
concatenated pair u = [q; k] through the gate backbone to get (kappa, phi,
psi), evaluate the closed-form logit mean/variance at the head's normalized
time, draw the logit by reparameterization, softmax over the K selected keys,
and mix the selected values.  Heads are concatenated and projected to twice
the model width, which splits into the predictive mean and log-std streams.

Everything up to the noise injection is deterministic given the input, so a
Monte Carlo ensemble shares one trunk evaluation and only replays the cheap
sampling tail per member.  Gradients flow through all members into the shared
trunk; `forward` is exactly `mc_forward` with one member.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Rng, Tensor
from .curation import select_keys
from .errors import DomainError, GraphError, NumericError, ValidationError
from .gating import (
    GateOutputs,
    MaskedLinear,
    TimeParams,
    backbone_forward,
    init_masked_linear,
    sensory_project,
)

_NOISE_MODES = ("pair", "head")


@dataclass(frozen=True)
class NsacConfig:
    """Hyperparameters of one layer.

    ``d_in`` is the raw feature width consumed by the sensory gates and
    defaults to ``d_model``.  ``deterministic`` forces the zero-diffusion
    limit (no logit noise), which reduces the layer to plain sparse
    attention and is used by equivalence tests.
    """

    d_model: int = 64
    num_heads: int = 16
    top_k: int = 8
    sparsity: float = 0.5
    kappa_min: float = 1e-3
    psi_min: float = 1e-3
    mc_samples: int = 5
    seed: int = 0
    d_in: int | None = None
    noise_mode: str = "pair"
    deterministic: bool = False

    def __post_init__(self):
        if self.d_model < 1 or self.num_heads < 1:
            raise ValidationError("d_model and num_heads must be positive")
        if self.d_model % self.num_heads != 0:
            raise ValidationError(
                f"num_heads {self.num_heads} must divide d_model {self.d_model}"
            )
        if self.top_k < 1:
            raise ValidationError(f"top_k must be >= 1, got {self.top_k}")
        if self.mc_samples < 1:
            raise ValidationError(f"mc_samples must be >= 1, got {self.mc_samples}")
        if not 0.0 < self.sparsity < 1.0:
            raise ValidationError(f"sparsity must lie in (0, 1), got {self.sparsity}")
        if self.kappa_min <= 0.0 or self.psi_min <= 0.0:
            raise ValidationError("kappa_min and psi_min must be positive")
        if self.noise_mode not in _NOISE_MODES:
            raise ValidationError(f"noise_mode must be one of {_NOISE_MODES}")
        if self.seed < 0:
            raise ValidationError("seed must be nonnegative")
        if self.d_in is not None and self.d_in < 1:
            raise ValidationError("d_in must be positive")

    @property
    def d_head(self) -> int:
        return self.d_model // self.num_heads

    @property
    def input_dim(self) -> int:
        return self.d_in if self.d_in is not None else self.d_model


@dataclass
class LogitMoments:
    """Mean and variance of every selected logit, shape (batch, H, nq, K)."""

    mu_ou: Tensor
    var_ou: Tensor


@dataclass
class PredictiveDistribution:
    """Heteroscedastic Gaussian output: mean and log-std, each (..., d_model)."""

    mu_out: Tensor
    s_out: Tensor


@dataclass
class MCEnsemble:
    """Stochastic forward passes with shared weights and independent noise."""

    means: list[Tensor]
    log_stds: list[Tensor]

    def __len__(self) -> int:
        return len(self.means)

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        return (
            np.stack([m.data for m in self.means]),
            np.stack([s.data for s in self.log_stds]),
        )


@dataclass
class UncertaintyDecomposition:
    aleatoric: np.ndarray
    epistemic: np.ndarray


@dataclass
class TrunkState:
    """Deterministic part of a forward pass, reused by every MC member."""

    moments: LogitMoments
    v_selected: Tensor
    batched: bool
    key_indices: np.ndarray
    pool_sizes: np.ndarray


def logit_distribution(gates: GateOutputs) -> LogitMoments:
    """Closed-form logit mean/variance from the gate coefficients.

    mu = phi (1 - e^{-kappa t});  var = psi^2 / (2 kappa) (1 - e^{-2 kappa t}).
    """
    if np.any(gates.kappa.data <= 0.0):
        raise DomainError("kappa must stay above its positive floor")
    decay = ad.exp(gates.kappa * gates.t * (-1.0))
    mu = gates.phi * (1.0 - decay)
    var = gates.psi * gates.psi / (gates.kappa * 2.0) * (1.0 - decay * decay)
    return LogitMoments(mu_ou=mu, var_ou=var)


def stochastic_weights(
    moments: LogitMoments,
    rng: Rng | None = None,
    noise: np.ndarray | None = None,
    deterministic: bool = False,
    noise_mode: str = "pair",
) -> Tensor:
    """Attention weights over the K selected keys, one softmax per query.

    The logit is ``mu + sigma * eps`` (reparameterized, so gradients reach
    both moments); ``eps`` is standard normal per pair, or shared across a
    head's pairs in ``head`` mode.  ``noise`` overrides the draw for
    gradient checks with frozen noise.  The variance is floored at 1e-12
    under the square root to guard rounding near t = 0.
    """
    if deterministic:
        logits = moments.mu_ou
    else:
        shape = moments.mu_ou.shape
        if noise is None:
            if rng is None:
                raise ValidationError("stochastic weights need an rng or explicit noise")
            if noise_mode == "head":
                noise = rng.normal(shape[:-2] + (1, 1)) if len(shape) >= 2 else rng.normal(())
            else:
                noise = rng.normal(shape)
        sigma = ad.sqrt(ad.clamp_min(moments.var_ou, 1e-12))
        logits = moments.mu_ou + sigma * noise
    return ad.softmax_stable(logits, axis=-1)


def attention_scores(alpha: Tensor, v_selected: Tensor) -> Tensor:
    """Convex combination of the selected value rows, per query."""
    if alpha.shape != v_selected.shape[:-1]:
        raise GraphError(
            f"weights {alpha.shape} are misaligned with values {v_selected.shape}"
        )
    expanded = alpha.reshape(alpha.shape + (1,))
    return (expanded * v_selected).sum(axis=-2)


def decompose_uncertainty(ensemble: MCEnsemble) -> UncertaintyDecomposition:
    """Aleatoric = mean member variance exp(2s); epistemic = spread of member means."""
    mus, log_stds = ensemble.stacked()
    aleatoric = np.mean(np.exp(2.0 * log_stds), axis=0)
    epistemic = np.var(mus, axis=0)  # population variance over members
    return UncertaintyDecomposition(aleatoric=aleatoric, epistemic=epistemic)


class NsacLayer:
    """Weights plus the forward computation described in the module docstring."""

    def __init__(self, cfg: NsacConfig):
        self.cfg = cfg
        root = Rng(cfg.seed)
        d_in, dm, dh = cfg.input_dim, cfg.d_model, cfg.d_head
        # q and k share their initial mask and weights (distinct tensors, so they
        # diverge in training): with W_q = W_k at start, q.k tracks the input
        # inner product, so curation scores are meaningful before any learning.
        self.sensory = tuple(
            init_masked_linear(d_in, dm, cfg.sparsity, cfg.seed, root.child(i))
            for i in (0, 0, 2)
        )
        self.trunk_layers = (
            init_masked_linear(2 * dh, dm, cfg.sparsity, cfg.seed, root.child(3)),
            init_masked_linear(dm, dm // 2, cfg.sparsity, cfg.seed, root.child(4)),
        )
        self.coeff_heads = tuple(
            init_masked_linear(dm // 2, 1, cfg.sparsity, cfg.seed, root.child(5 + i))
            for i in range(3)
        )
        # t_b = 2 starts normalized time near its upper range, where the OU
        # mean term 1 - exp(-kappa t) gives logits usable contrast; both
        # parameters remain free per head.
        self.time = TimeParams(
            t_a=Tensor(np.ones(cfg.num_heads), requires_grad=True),
            t_b=Tensor(np.full(cfg.num_heads, 2.0), requires_grad=True),
        )
        bound = 1.0 / np.sqrt(dm)
        self.out_weight = Tensor(
            root.child(8).uniform(-bound, bound, (dm, 2 * dm)), requires_grad=True
        )
        self.out_bias = Tensor(np.zeros(2 * dm), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        params: list[Tensor] = []
        for gate in (*self.sensory, *self.trunk_layers, *self.coeff_heads):
            params.extend(gate.parameters())
        params.extend([self.time.t_a, self.time.t_b, self.out_weight, self.out_bias])
        return params

    def _normalized_time(self, ts: np.ndarray) -> Tensor:
        # ts is (batch, nq); result (batch, H, nq, 1) for broadcasting over K
        h = self.cfg.num_heads
        t_a = self.time.t_a.reshape((1, h, 1))
        t_b = self.time.t_b.reshape((1, h, 1))
        t = ad.sigmoid(t_a * (-ts[:, None, :]) + t_b)
        return t.reshape(t.shape + (1,))

    def trunk(self, x: Tensor, t_sample=1.0, query_positions=None) -> TrunkState:
        """Deterministic pipeline: sensory gates, curation, coefficients, moments."""
        cfg = self.cfg
        x = x if isinstance(x, Tensor) else Tensor(x)
        batched = x.ndim == 3
        if x.ndim == 2:
            x = x.reshape((1,) + x.shape)
        if x.ndim != 3 or x.shape[-1] != cfg.input_dim:
            raise ValidationError(
                f"expected (batch, seq, {cfg.input_dim}) or (seq, {cfg.input_dim}), got {x.shape}"
            )
        if not np.all(np.isfinite(x.data)):
            raise NumericError("non-finite values detected in layer input")
        b, n, _ = x.shape
        if cfg.top_k > n:
            raise DomainError(f"top_k={cfg.top_k} exceeds sequence length {n}")

        ts = np.asarray(t_sample, dtype=np.float64)
        if ts.ndim == 0:
            ts = np.full((b, n), float(ts))
        elif ts.ndim == 1:
            ts = np.broadcast_to(ts, (b, n))
        if ts.shape != (b, n):
            raise ValidationError(f"t_sample shape {ts.shape} does not match ({b}, {n})")
        if not np.all(np.isfinite(ts)) or np.any(ts < 0):
            raise DomainError("t_sample must be finite and nonnegative")

        q, k, v = sensory_project(x.reshape((b * n, cfg.input_dim)), self.sensory)
        ad.assert_finite(q, "sensory projection")

        def heads_of(m: Tensor) -> Tensor:
            return m.reshape((b, n, cfg.num_heads, cfg.d_head)).transpose((0, 2, 1, 3))

        qh, kh, vh = heads_of(q), heads_of(k), heads_of(v)

        if query_positions is None:
            q_sel = qh
            ts_sel = ts
        else:
            qpos = np.asarray(query_positions, dtype=np.intp)
            if qpos.ndim != 1 or np.any(qpos < 0) or np.any(qpos >= n):
                raise ValidationError("query_positions must be valid sequence indices")
            idx_q = np.broadcast_to(qpos, (b, cfg.num_heads, qpos.size))
            q_sel = ad.gather_rows(qh, idx_q)
            ts_sel = ts[:, qpos]
        nq = q_sel.shape[2]

        key_idx, pools, _ = select_keys(q_sel.data, kh.data, cfg.top_k)
        k_sel = ad.gather_rows(kh, key_idx)  # (b, H, nq, K, dh)
        v_sel = ad.gather_rows(vh, key_idx)
        q_tiled = ad.broadcast_to(
            q_sel.reshape((b, cfg.num_heads, nq, 1, cfg.d_head)), k_sel.shape
        )
        pairs = ad.concat([q_tiled, k_sel], axis=-1)

        rows = pairs.reshape((b * cfg.num_heads * nq * cfg.top_k, 2 * cfg.d_head))
        t = self._normalized_time(ts_sel)
        gates = backbone_forward(
            rows, self.trunk_layers, self.coeff_heads, t,
            kappa_min=cfg.kappa_min, psi_min=cfg.psi_min,
        )
        shape = (b, cfg.num_heads, nq, cfg.top_k)
        gates = GateOutputs(
            kappa=gates.kappa.reshape(shape),
            phi=gates.phi.reshape(shape),
            psi=gates.psi.reshape(shape),
            t=t,
        )
        ad.assert_finite(gates.kappa, "gate backbone")
        moments = logit_distribution(gates)
        ad.assert_finite(moments.var_ou, "logit moments")
        return TrunkState(
            moments=moments,
            v_selected=v_sel,
            batched=batched,
            key_indices=key_idx,
            pool_sizes=pools,
        )

    def sample(self, state: TrunkState, rng: Rng | None = None,
               noise: np.ndarray | None = None) -> PredictiveDistribution:
        """Stochastic tail of one pass: draw logits, attend, project, split."""
        cfg = self.cfg
        alpha = stochastic_weights(
            state.moments, rng=rng, noise=noise,
            deterministic=cfg.deterministic, noise_mode=cfg.noise_mode,
        )
        ad.assert_finite(alpha, "attention weights")
        mixed = attention_scores(alpha, state.v_selected)  # (b, H, nq, dh)
        b, _, nq, _ = mixed.shape
        merged = mixed.transpose((0, 2, 1, 3)).reshape((b * nq, cfg.d_model))
        out = merged @ self.out_weight + self.out_bias
        ad.assert_finite(out, "output projection")
        out = out.reshape((b, nq, 2 * cfg.d_model))
        mu, s = out[..., : cfg.d_model], out[..., cfg.d_model :]
        if not state.batched:
            mu, s = mu[0], s[0]
        return PredictiveDistribution(mu_out=mu, s_out=s)

    def forward(self, x, t_sample=1.0, rng: Rng | None = None,
                noise: np.ndarray | None = None, query_positions=None) -> PredictiveDistribution:
        state = self.trunk(x, t_sample=t_sample, query_positions=query_positions)
        return self.sample(state, rng=rng, noise=noise)

    def mc_forward(self, x, n_samples: int, rng: Rng, t_sample=1.0,
                   query_positions=None) -> MCEnsemble:
        """``n_samples`` stochastic passes with shared weights and trunk."""
        if n_samples < 1:
            raise ValidationError(f"n_samples must be >= 1, got {n_samples}")
        state = self.trunk(x, t_sample=t_sample, query_positions=query_positions)
        means, log_stds = [], []
        for i in range(n_samples):
            member = self.sample(state, rng=rng.child(i))
            means.append(member.mu_out)
            log_stds.append(member.s_out)
        return MCEnsemble(means=means, log_stds=log_stds)


def multihead_forward(layer: NsacLayer, x, t_sample=1.0, rng: Rng | None = None,
                      **kwargs) -> PredictiveDistribution:
    """Functional alias for :meth:`NsacLayer.forward`."""
    return layer.forward(x, t_sample=t_sample, rng=rng, **kwargs)


_READOUTS = ("all", "last")


class NsacRegressor:
    """Task head over the layer: the first ``out_dim`` output dims are the
    prediction, mean and log-std alike.  The output projection is trainable,
    so this slicing is as expressive as a separate linear readout.

    ``readout`` picks which positions carry predictions when the caller does
    not say: every position, or only the final one.
    """

    def __init__(self, layer: NsacLayer, out_dim: int, readout: str = "all"):
        if not 1 <= out_dim <= layer.cfg.d_model:
            raise ValidationError(
                f"out_dim must lie in [1, {layer.cfg.d_model}], got {out_dim}"
            )
        if readout not in _READOUTS:
            raise ValidationError(f"readout must be one of {_READOUTS}")
        self.layer = layer
        self.out_dim = out_dim
        self.readout = readout

    def parameters(self) -> list[Tensor]:
        return self.layer.parameters()

    def _positions(self, x, query_positions):
        if query_positions is not None or self.readout == "all":
            return query_positions
        n = x.shape[-2]
        return [n - 1]

    def _slice(self, dist: PredictiveDistribution) -> PredictiveDistribution:
        d = self.out_dim
        return PredictiveDistribution(
            mu_out=dist.mu_out[..., :d], s_out=dist.s_out[..., :d]
        )

    def predict(self, x, t_sample=1.0, rng: Rng | None = None,
                noise: np.ndarray | None = None, query_positions=None) -> PredictiveDistribution:
        qp = self._positions(x, query_positions)
        return self._slice(
            self.layer.forward(x, t_sample=t_sample, rng=rng, noise=noise,
                               query_positions=qp)
        )

    def mc_predict(self, x, n_samples: int, rng: Rng, t_sample=1.0,
                   query_positions=None) -> MCEnsemble:
        qp = self._positions(x, query_positions)
        ens = self.layer.mc_forward(x, n_samples, rng, t_sample=t_sample,
                                    query_positions=qp)
        d = self.out_dim
        return MCEnsemble(
            means=[m[..., :d] for m in ens.means],
            log_stds=[s[..., :d] for s in ens.log_stds],
        )
