"""Sparse wiring masks, sensory projections, and the coefficient backbone.

The attention layer never sees raw weights: every linear map here carries a
fixed binary wiring mask (sensory -> inter -> command -> heads), so a chosen
fraction of connections simply does not exist.  The backbone turns each
curated pair u = [q; k] into the three diffusion coefficients, squashed into
their legal ranges:

    kappa = softplus(h_kappa) + kappa_min   (> 0, mean reversion)
    phi   = tanh(h_phi)                     (in (-1, 1), long-term logit)
    psi   = softplus(h_psi) + psi_min       (> 0, diffusion scale)

Per-head time is a learned squashing of the sample time stamp,
t = sigmoid(-t_a * t_sample + t_b), which keeps t in [0, 1] by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Rng, Tensor, sigmoid, softplus, tanh
from .errors import DomainError, ValidationError


@dataclass(frozen=True)
class WiringMask:
    """Immutable binary in x out connectivity pattern."""

    mask: np.ndarray
    sparsity: float
    seed: int

    def __post_init__(self):
        self.mask.flags.writeable = False


@dataclass
class TimeParams:
    """Learnable per-head time squashing coefficients."""

    t_a: Tensor
    t_b: Tensor


@dataclass
class GateOutputs:
    """Diffusion coefficients for a batch of curated pairs, plus time."""

    kappa: Tensor
    phi: Tensor
    psi: Tensor
    t: Tensor


@dataclass
class MaskedLinear:
    """A linear map whose weight matrix is elementwise-gated by a wiring mask."""

    weight: Tensor
    bias: Tensor
    wiring: WiringMask

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def __call__(self, x: Tensor) -> Tensor:
        return x @ (self.weight * self.wiring.mask) + self.bias


def build_wiring(d_in: int, d_out: int, sparsity: float, seed: int, rng: Rng | None = None) -> WiringMask:
    """Drop a ``sparsity`` fraction of connections at random, deterministically.

    Any output unit left with no incoming connection is repaired by forcing
    the connection from the lowest input index, so the zero count can exceed
    the rounded target by at most the number of repairs.
    """
    if not 0.0 < sparsity < 1.0:
        raise DomainError(f"sparsity must lie strictly in (0, 1), got {sparsity}")
    if d_in < 1 or d_out < 1:
        raise DomainError(f"mask dimensions must be positive, got {d_in}x{d_out}")
    if rng is None:
        rng = Rng(seed)
    n_zero = int(round(sparsity * d_in * d_out))
    flat = np.ones(d_in * d_out)
    flat[rng.permutation(d_in * d_out)[:n_zero]] = 0.0
    mask = flat.reshape(d_in, d_out)
    dead = np.flatnonzero(mask.sum(axis=0) == 0)
    mask[0, dead] = 1.0
    return WiringMask(mask=mask, sparsity=sparsity, seed=seed)


def init_masked_linear(d_in: int, d_out: int, sparsity: float, seed: int, rng: Rng) -> MaskedLinear:
    """Masked map with weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], zero bias."""
    wiring = build_wiring(d_in, d_out, sparsity, seed, rng.child(0))
    bound = 1.0 / np.sqrt(d_in)
    weight = Tensor(rng.child(1).uniform(-bound, bound, (d_in, d_out)), requires_grad=True)
    bias = Tensor(np.zeros(d_out), requires_grad=True)
    return MaskedLinear(weight=weight, bias=bias, wiring=wiring)


def sensory_project(x: Tensor, gates) -> tuple[Tensor, Tensor, Tensor]:
    """Three independent masked linear + tanh maps producing q, k, v.

    ``x`` has shape ``(rows, d_in)``; ``gates`` are the q/k/v
    :class:`MaskedLinear` maps.
    """
    gq, gk, gv = gates
    d_in = x.shape[-1]
    for g in (gq, gk, gv):
        if g.weight.shape[0] != d_in:
            raise ValidationError(
                f"sensory gate expects {g.weight.shape[0]} input features, got {d_in}"
            )
    return tanh(gq(x)), tanh(gk(x)), tanh(gv(x))


def backbone_forward(
    u: Tensor,
    trunk,
    heads,
    t: Tensor,
    kappa_min: float = 1e-3,
    psi_min: float = 1e-3,
) -> GateOutputs:
    """Shared two-layer trunk feeding the three coefficient heads.

    ``u`` is ``(rows, 2 d_head)``; the trunk layers apply masked linear maps
    with tanh, the heads are masked linear maps to a single unit each.  The
    returned coefficient tensors have shape ``(rows,)``.
    """
    inter, command = trunk
    head_kappa, head_phi, head_psi = heads
    h = tanh(inter(u))
    h = tanh(command(h))
    kappa = softplus(head_kappa(h)[..., 0]) + kappa_min
    phi = tanh(head_phi(h)[..., 0])
    psi = softplus(head_psi(h)[..., 0]) + psi_min
    return GateOutputs(kappa=kappa, phi=phi, psi=psi, t=t)


def normalized_time(t_sample, p: TimeParams) -> Tensor:
    """Per-head normalized time sigmoid(-t_a * t_sample + t_b).

    ``t_sample`` is a nonnegative scalar (or array of timestamps); pass 1.0
    when the data carries no meaningful time.  The result has the head axis
    first: shape ``(n_heads,) + shape(t_sample)``.
    """
    ts = np.asarray(t_sample, dtype=np.float64)
    if not np.all(np.isfinite(ts)) or np.any(ts < 0):
        raise DomainError("t_sample must be finite and nonnegative")
    h = p.t_a.shape[0]
    shape = (h,) + (1,) * ts.ndim
    t_a = p.t_a.reshape(shape)
    t_b = p.t_b.reshape(shape)
    return sigmoid(t_a * (-ts) + t_b)
