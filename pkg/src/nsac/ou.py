"""Closed-form moments of an Ornstein-Uhlenbeck logit process.

The logit ``a_t`` follows ``da = kappa (phi - a) dt + psi dW`` with the
coefficients held fixed over the interval (they are recomputed per forward
pass, i.e. piecewise constant), so the first two moments are available in
closed form:

    E[a_t]   = phi + (a0 - phi) exp(-kappa t)
    Var[a_t] = psi^2 / (2 kappa) * (1 - exp(-2 kappa t))

The Euler-Maruyama simulator below exists purely as an independent check of
those formulas; nothing on the model's forward path ever integrates the SDE
numerically.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import Rng
from .errors import DomainError


@dataclass(frozen=True)
class OUCoefficients:
    """Frozen drift/diffusion coefficients for one interval.

    Parameters
    ----------
    kappa : float
        Mean-reversion rate, must be positive.
    phi : float
        Long-term mean in logit units, in [-1, 1] (a tanh output upstream).
    psi : float
        Diffusion scale; nonnegative, zero giving the deterministic limit.
    t : float
        Elapsed time, nonnegative.  The attention layer always passes a
        normalized time in [0, 1]; larger values are legal here so the
        stationary regime can be probed directly.
    a0 : float
        Initial logit.  The layer fixes this to 0; the general case is kept
        for the simulator.
    """

    kappa: float
    phi: float
    psi: float
    t: float
    a0: float = 0.0

    def __post_init__(self):
        if not self.kappa > 0.0:
            raise DomainError(f"kappa must be positive, got {self.kappa}")
        if not -1.0 <= self.phi <= 1.0:
            raise DomainError(f"phi must lie in [-1, 1], got {self.phi}")
        if self.psi < 0.0:
            raise DomainError(f"psi must be nonnegative, got {self.psi}")
        if self.t < 0.0:
            raise DomainError(f"t must be nonnegative, got {self.t}")


@dataclass(frozen=True)
class LogitDistribution:
    """Gaussian over a single logit: mean and variance."""

    mu_ou: float
    var_ou: float


def ou_mean(c: OUCoefficients) -> float:
    """Expected logit at time ``t``; with ``a0 = 0`` this is phi (1 - e^{-kappa t})."""
    return c.phi + (c.a0 - c.phi) * math.exp(-c.kappa * c.t)


def ou_variance(c: OUCoefficients) -> float:
    """Logit variance at time ``t``; increases from 0 toward psi^2 / (2 kappa)."""
    if c.psi <= 0.0:
        raise DomainError("ou_variance needs a strictly positive diffusion scale")
    return c.psi * c.psi / (2.0 * c.kappa) * (1.0 - math.exp(-2.0 * c.kappa * c.t))


def ou_mean_grad_phi(c: OUCoefficients) -> float:
    """Analytic d(ou_mean)/d(phi) with ``a0`` held fixed."""
    return 1.0 - math.exp(-c.kappa * c.t)


def ou_variance_grad_psi(c: OUCoefficients) -> float:
    """Analytic d(ou_variance)/d(psi)."""
    return c.psi * (1.0 - math.exp(-2.0 * c.kappa * c.t)) / c.kappa


def ou_sample(d: LogitDistribution, eps):
    """Reparameterized draw ``mu + sqrt(var) * eps``.

    ``eps`` may be a scalar or an array of standard-normal draws; the result
    has the same shape.
    """
    if d.var_ou < 0.0:
        raise DomainError(f"variance must be nonnegative, got {d.var_ou}")
    return d.mu_ou + math.sqrt(d.var_ou) * np.asarray(eps, dtype=np.float64)


def euler_maruyama_oracle(
    c: OUCoefficients, dt: float, n_paths: int, rng: Rng
) -> tuple[float, float]:
    """Simulate the SDE with explicit Euler-Maruyama steps.

    Returns the empirical mean and (ddof=1) variance of ``a_t`` over
    ``n_paths`` independent paths.  Test oracle only; the weak error is
    O(dt), so comparisons should leave statistical room for that bias.
    """
    if dt <= 0.0:
        raise DomainError(f"dt must be positive, got {dt}")
    if n_paths < 1:
        raise DomainError(f"n_paths must be at least 1, got {n_paths}")
    if dt >= 1.0 / c.kappa:
        warnings.warn(
            f"Euler-Maruyama step dt={dt} >= 1/kappa={1.0 / c.kappa:.6g}; "
            "the explicit scheme is unstable at this resolution",
            RuntimeWarning,
            stacklevel=2,
        )

    a = np.full(n_paths, c.a0, dtype=np.float64)
    n_full = int(c.t / dt)
    remainder = c.t - n_full * dt
    for _ in range(n_full):
        noise = rng.normal((n_paths,))
        a += c.kappa * (c.phi - a) * dt + c.psi * math.sqrt(dt) * noise
    if remainder > 1e-15:
        noise = rng.normal((n_paths,))
        a += c.kappa * (c.phi - a) * remainder + c.psi * math.sqrt(remainder) * noise

    mean = float(np.mean(a))
    var = float(np.var(a, ddof=1)) if n_paths > 1 else 0.0
    return mean, var
