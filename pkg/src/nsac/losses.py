"""Training objective: heteroscedastic Gaussian NLL on in-distribution data
plus a log-ratio regularizer that pushes epistemic variance up on perturbed
copies of the batch.

The regularizer term is log(1 + E[Var mu_ID] / (E[Var mu_OOD] + eps)): it is
zero when the model is far more uncertain off-distribution and grows toward
log 2 and beyond as the two variances approach each other or invert.  The
perturbed inputs contribute nothing to the NLL.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Rng, Tensor
from .errors import DomainError, NumericError, ValidationError
from .layer import MCEnsemble
from .optim import AdamW

_REDUCES = ("var_then_mean", "mean_then_var")


@dataclass(frozen=True)
class OodParams:
    """Gaussian perturbation applied to inputs to manufacture off-distribution data."""

    mu_pert: float = 0.0
    sigma_pert: float = 5.0

    def __post_init__(self):
        if not self.sigma_pert > 0:
            raise DomainError(f"sigma_pert must be positive, got {self.sigma_pert}")


@dataclass(frozen=True)
class LossBreakdown:
    nll: float
    reg: float
    total: float
    lam: float
    var_id: float
    var_ood: float

    def __post_init__(self):
        if abs(self.total - (self.nll + self.lam * self.reg)) > 1e-12:
            raise ValidationError("loss breakdown is inconsistent")


def gaussian_nll(y, mu_out: Tensor, s_out: Tensor) -> Tensor:
    """Mean of 1/2 [log 2pi + 2 s + (y - mu)^2 e^{-2s}] over every element."""
    y = np.asarray(getattr(y, "data", y), dtype=np.float64)
    if y.shape != mu_out.shape or mu_out.shape != s_out.shape:
        raise ValidationError(
            f"shape mismatch: y {y.shape}, mu {mu_out.shape}, s {s_out.shape}"
        )
    err = mu_out - y
    quad = err * err * ad.exp(s_out * (-2.0))
    return (quad + s_out * 2.0 + math.log(2.0 * math.pi)).mean() * 0.5


def perturb_ood(x_id, p: OodParams, rng: Rng) -> np.ndarray:
    """``x + xi`` with elementwise xi ~ N(mu_pert, sigma_pert^2); plain array
    out, so nothing differentiates through the perturbation."""
    x = np.asarray(getattr(x_id, "data", x_id), dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericError("cannot perturb non-finite inputs")
    return x + p.mu_pert + p.sigma_pert * rng.normal(x.shape)


def epistemic_reg(var_id, var_ood, eps: float = 1e-8):
    """log(1 + var_id / (var_ood + eps)); accepts floats or graph tensors."""
    if eps <= 0:
        raise DomainError(f"eps must be positive, got {eps}")
    if isinstance(var_id, Tensor) or isinstance(var_ood, Tensor):
        vi = var_id if isinstance(var_id, Tensor) else Tensor(np.asarray(var_id, dtype=float))
        vo = var_ood if isinstance(var_ood, Tensor) else Tensor(np.asarray(var_ood, dtype=float))
        if np.any(vi.data < 0) or np.any(vo.data < 0):
            raise DomainError("variances must be nonnegative")
        return ad.log(vi / (vo + eps) + 1.0)
    if var_id < 0 or var_ood < 0:
        raise DomainError("variances must be nonnegative")
    return math.log1p(var_id / (var_ood + eps))


def member_mean_variance(ensemble: MCEnsemble, reduce: str = "var_then_mean") -> Tensor:
    """Scalar epistemic-variance summary of an ensemble, kept differentiable.

    Default: population variance across members at each output element, then
    the mean over elements.  The flagged alternative averages each member
    over elements first and takes the variance of those scalars.
    """
    if reduce not in _REDUCES:
        raise ValidationError(f"reduce must be one of {_REDUCES}")
    n = len(ensemble.means)
    if reduce == "mean_then_var":
        members = [m.mean() for m in ensemble.means]
    else:
        members = ensemble.means
    center = members[0]
    for m in members[1:]:
        center = center + m
    center = center / float(n)
    acc = None
    for m in members:
        dev = m - center
        sq = dev * dev
        acc = sq if acc is None else acc + sq
    var = acc / float(n)
    return var if var.ndim == 0 else var.mean()


def ensemble_nll(y, ensemble: MCEnsemble) -> Tensor:
    """NLL averaged over the ensemble members."""
    acc = None
    for mu, s in zip(ensemble.means, ensemble.log_stds):
        term = gaussian_nll(y, mu, s)
        acc = term if acc is None else acc + term
    return acc / float(len(ensemble.means))


def objective(model, x_id, y, n_mc: int, p: OodParams, lam: float, rng: Rng,
              t_sample=1.0, query_positions=None, eps: float = 1e-8,
              reduce: str = "var_then_mean", x_ood: np.ndarray | None = None):
    """Differentiable total loss and its breakdown scalars.

    Noise enters through three independent streams of ``rng``: member noise
    on the clean batch, the input perturbation, and member noise on the
    perturbed batch.  Passing ``x_ood`` overrides the perturbation draw
    (gradient checks freeze it that way).  ``lam = 0`` skips the perturbed
    passes entirely and reports zero for the regularizer terms.
    """
    if lam < 0:
        raise ValidationError(f"lambda must be nonnegative, got {lam}")
    ens_id = model.mc_predict(x_id, n_mc, rng.child(0), t_sample=t_sample,
                              query_positions=query_positions)
    nll = ensemble_nll(y, ens_id)
    if lam == 0.0:
        total = nll
        reg = Tensor(np.array(0.0))
        var_id = var_ood = Tensor(np.array(0.0))
    else:
        if x_ood is None:
            x_ood = perturb_ood(x_id, p, rng.child(1))
        ens_ood = model.mc_predict(x_ood, n_mc, rng.child(2), t_sample=t_sample,
                                   query_positions=query_positions)
        var_id = member_mean_variance(ens_id, reduce=reduce)
        var_ood = member_mean_variance(ens_ood, reduce=reduce)
        reg = epistemic_reg(var_id, var_ood, eps=eps)
        total = nll + reg * lam
    breakdown = LossBreakdown(
        nll=float(nll.data), reg=float(reg.data),
        total=float(nll.data) + lam * float(reg.data), lam=lam,
        var_id=float(var_id.data), var_ood=float(var_ood.data),
    )
    return total, breakdown


def train_step(batch, model, optimizer: AdamW, n_mc: int, p: OodParams,
               lam: float, rng: Rng, t_sample=1.0, query_positions=None,
               eps: float = 1e-8, reduce: str = "var_then_mean") -> LossBreakdown:
    """One optimizer update from one batch; returns the loss breakdown.

    A non-finite loss aborts before touching the weights and names the term
    that went bad.
    """
    x_id, y = batch
    total, breakdown = objective(
        model, x_id, y, n_mc, p, lam, rng, t_sample=t_sample,
        query_positions=query_positions, eps=eps, reduce=reduce,
    )
    if not math.isfinite(breakdown.total):
        stage = "nll" if not math.isfinite(breakdown.nll) else "regularizer"
        raise NumericError(f"non-finite loss in the {stage} term; step aborted")
    optimizer.zero_grad()
    ad.backward(total)
    optimizer.step()
    optimizer.zero_grad()
    return breakdown
