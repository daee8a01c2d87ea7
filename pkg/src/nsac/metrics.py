"""Evaluation metrics for heteroscedastic Gaussian predictions: MSE, NLL,
closed-form CRPS, a regression adaptation of expected calibration error, and
AUROC for classifying above-median targets from predicted exceedance
probabilities.

Everything operates on flat records (y, mu, sigma); multi-dimensional outputs
are flattened to one record per (sample, dimension) before scoring.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, rankdata

from .errors import DomainError, ValidationError

_ECE_MIDPOINTS = ("confidence", "z")


@dataclass(frozen=True)
class EvalRecord:
    """One scalar prediction: target, predictive mean, predictive std."""

    y: float
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class MetricsReport:
    mse: float
    nll: float
    crps: float
    ece: float
    auroc: float
    n: int

    def as_dict(self) -> dict:
        return {"mse": self.mse, "nll": self.nll, "crps": self.crps,
                "ece": self.ece, "auroc": self.auroc, "n": self.n}


def _as_arrays(records):
    """Accept a list of EvalRecord or a (y, mu, sigma) array triple."""
    if isinstance(records, tuple) and len(records) == 3:
        y, mu, sigma = (np.asarray(a, dtype=np.float64).ravel() for a in records)
    else:
        records = list(records)
        y = np.array([r.y for r in records], dtype=np.float64)
        mu = np.array([r.mu for r in records], dtype=np.float64)
        sigma = np.array([r.sigma for r in records], dtype=np.float64)
    if y.size == 0:
        raise ValidationError("metrics need at least one record")
    if not (y.size == mu.size == sigma.size):
        raise ValidationError("record arrays must share one length")
    if np.any(sigma <= 0):
        raise DomainError("every sigma must be positive")
    return y, mu, sigma


def mse(records) -> float:
    y, mu, _ = _as_arrays(records)
    return float(np.mean((mu - y) ** 2))


def nll_metric(records) -> float:
    """Mean of 1/2 log(2 pi) + log sigma + (y - mu)^2 / (2 sigma^2)."""
    y, mu, sigma = _as_arrays(records)
    z2 = ((y - mu) / sigma) ** 2
    return float(np.mean(0.5 * math.log(2.0 * math.pi) + np.log(sigma) + 0.5 * z2))


def crps_gaussian(records) -> float:
    """Mean CRPS via the Gaussian closed form
    sigma [z (2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi)], z = (y - mu)/sigma."""
    y, mu, sigma = _as_arrays(records)
    z = (y - mu) / sigma
    per = sigma * (z * (2.0 * norm.cdf(z) - 1.0) + 2.0 * norm.pdf(z)
                   - 1.0 / math.sqrt(math.pi))
    return float(np.mean(per))


def crps_integral_oracle(y: float, mu: float, sigma: float,
                         half_width: float = 12.0, n_grid: int = 100_001) -> float:
    """Direct numerical integration of the defining integral
    int (Phi((t-mu)/sigma) - 1(t >= y))^2 dt; the independent check for the
    closed form.  The integrand jumps at t = y, so each side is integrated
    separately where it is smooth."""
    from scipy.integrate import trapezoid

    lo = min(mu - half_width * sigma, y - half_width * sigma)
    hi = max(mu + half_width * sigma, y + half_width * sigma)
    left = np.linspace(lo, y, n_grid)
    right = np.linspace(y, hi, n_grid)
    below = norm.cdf((left - mu) / sigma) ** 2
    above = (norm.cdf((right - mu) / sigma) - 1.0) ** 2
    return float(trapezoid(below, left) + trapezoid(above, right))


def ece_regression(records, bins: int = 10, midpoint: str = "confidence") -> float:
    """Binned gap between Gaussian confidence and empirical coverage.

    Confidence c = 2 Phi(z) - 1 with z = |y - mu|/sigma is binned uniformly
    over [0, 1].  A bin's coverage is the fraction of its own records whose z
    falls below the bin midpoint's z value; by default that midpoint lives in
    confidence space (z_mid = Phi^{-1}((1 + c_mid)/2)), with the z-space
    average of the bin's edge quantiles behind the flag.  The result is the
    record-weighted mean absolute gap, in [0, 1].
    """
    if bins < 1:
        raise ValidationError(f"bins must be >= 1, got {bins}")
    if midpoint not in _ECE_MIDPOINTS:
        raise ValidationError(f"midpoint must be one of {_ECE_MIDPOINTS}")
    y, mu, sigma = _as_arrays(records)
    z = np.abs(y - mu) / sigma
    conf = 2.0 * norm.cdf(z) - 1.0
    edges = np.linspace(0.0, 1.0, bins + 1)
    which = np.clip(np.digitize(conf, edges[1:-1]), 0, bins - 1)
    total = 0.0
    for k in range(bins):
        in_bin = which == k
        n_k = int(np.count_nonzero(in_bin))
        if n_k == 0:
            continue
        if midpoint == "confidence":
            c_mid = 0.5 * (edges[k] + edges[k + 1])
            z_mid = norm.ppf(0.5 * (1.0 + c_mid))
        else:
            z_lo = norm.ppf(0.5 * (1.0 + edges[k]))
            z_hi = norm.ppf(0.5 * (1.0 + edges[k + 1]))
            z_mid = 0.5 * (z_lo + z_hi)
        coverage = float(np.count_nonzero(z[in_bin] < z_mid)) / n_k
        confidence = float(conf[in_bin].mean())
        total += (n_k / y.size) * abs(confidence - coverage)
    return total


def auroc_median(records) -> float:
    """AUROC for predicting y above its empirical median from the model's
    exceedance probability p = 1 - Phi((m - mu)/sigma).

    Ties at the median go to the negative class; tied scores count one half.
    Computed exactly via the rank-sum identity.
    """
    y, mu, sigma = _as_arrays(records)
    m = float(np.median(y))
    labels = y > m
    n_pos = int(np.count_nonzero(labels))
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DomainError("median split left one class empty; AUROC is undefined")
    scores = 1.0 - norm.cdf((m - mu) / sigma)
    ranks = rankdata(scores)  # average ranks give half credit to ties
    rank_sum = float(ranks[labels].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def evaluate(records, bins: int = 10) -> MetricsReport:
    y, mu, sigma = _as_arrays(records)
    triple = (y, mu, sigma)
    return MetricsReport(
        mse=mse(triple),
        nll=nll_metric(triple),
        crps=crps_gaussian(triple),
        ece=ece_regression(triple, bins=bins),
        auroc=auroc_median(triple),
        n=int(y.size),
    )


def read_predictions_csv(path):
    """Read a predictions file with a ``y,mu,sigma`` header (extra columns
    are allowed and ignored); returns an array triple."""
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = {"y", "mu", "sigma"} - set(reader.fieldnames or ())
        if missing:
            raise ValidationError(f"{path} lacks columns {sorted(missing)}")
        rows = [(float(r["y"]), float(r["mu"]), float(r["sigma"])) for r in reader]
    if not rows:
        raise ValidationError(f"{path} holds no prediction rows")
    arr = np.array(rows, dtype=np.float64)
    return arr[:, 0], arr[:, 1], arr[:, 2]


def write_report_json(path, report: MetricsReport) -> None:
    with open(path, "w") as f:
        json.dump(report.as_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def aggregate_reports(reports) -> dict[str, tuple[float, float]]:
    """Per-metric (mean, population std) across seeds."""
    reports = list(reports)
    if not reports:
        raise ValidationError("nothing to aggregate")
    out = {}
    for key in ("mse", "nll", "crps", "ece", "auroc"):
        vals = np.array([getattr(r, key) for r in reports], dtype=np.float64)
        out[key] = (float(vals.mean()), float(vals.std()))
    return out


def format_aggregate(agg: dict[str, tuple[float, float]]) -> str:
    """Render aggregated metrics as ``name: mean ± std`` lines."""
    lines = [f"{key}: {m:.6f} ± {s:.6f}" for key, (m, s) in agg.items()]
    return "\n".join(lines)
