"""Irregularly observed 2D spiral trajectories plus normalization and splits.

Each trajectory is an Archimedean spiral x(t) = (r0 + a t) cos(w t + theta0),
y(t) = (r0 + a t) sin(w t + theta0) sampled at equally spaced times on
[0, 1], with randomized radius, growth, angular rate, phase, and turning
direction, and additive Gaussian noise on the coordinates.  A model sees 50
of the 150 points; the rest are held out.  Observations are drawn only from
the first 80% of the timeline, so every trajectory keeps an unobserved tail:
held-out points up to the last observed time score the interpolation regime,
points after it score extrapolation.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import Rng
from .errors import ValidationError

OBS_FRACTION_OF_TIMELINE = 0.8

R0_RANGE = (0.3, 1.0)
GROWTH_RANGE = (0.05, 0.3)
OMEGA_RANGE = (2.0, 4.0)
NOISE_STD_SCALED = 0.02


@dataclass(frozen=True)
class SpiralSet:
    """times (n_traj, n_points); points (n_traj, n_points, 2);
    observed_idx (n_traj, n_obs) sorted unique indices."""

    times: np.ndarray
    points: np.ndarray
    observed_idx: np.ndarray
    seed: int

    @property
    def n_traj(self) -> int:
        return self.times.shape[0]

    @property
    def n_points(self) -> int:
        return self.times.shape[1]


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.8
    val: float = 0.1
    test: float = 0.1
    seed: int = 0

    def __post_init__(self):
        parts = (self.train, self.val, self.test)
        if any(f < 0 for f in parts) or abs(sum(parts) - 1.0) > 1e-9:
            raise ValidationError(f"split fractions must be nonnegative and sum to 1, got {parts}")


@dataclass(frozen=True)
class MinMaxParams:
    lo: np.ndarray
    hi: np.ndarray

    def transform(self, data: np.ndarray) -> np.ndarray:
        span = self.hi - self.lo
        safe = np.where(span == 0.0, 1.0, span)
        out = (data - self.lo) / safe
        return np.where(span == 0.0, 0.0, out)

    def inverse(self, scaled: np.ndarray) -> np.ndarray:
        return scaled * (self.hi - self.lo) + self.lo


def generate_spirals(n_traj: int = 300, n_points: int = 150, n_obs: int = 50,
                     seed: int = 0, noise_std: float = NOISE_STD_SCALED,
                     r0_range=R0_RANGE, growth_range=GROWTH_RANGE,
                     omega_range=OMEGA_RANGE) -> SpiralSet:
    """Sample the benchmark; identical seeds give identical arrays.

    ``noise_std`` is expressed as a fraction of each coordinate's clean
    range over the whole set, so it lands at that magnitude after min-max
    scaling.  Observed indices are unique, sorted, and confined to the first
    80% of the timeline.  The parameter ranges exist for degenerate-geometry
    tests and sweeps; defaults are the benchmark.
    """
    if not 1 <= n_obs <= n_points:
        raise ValidationError(f"n_obs must lie in [1, {n_points}], got {n_obs}")
    if n_traj < 1:
        raise ValidationError(f"n_traj must be positive, got {n_traj}")
    obs_limit = max(int(np.floor(OBS_FRACTION_OF_TIMELINE * n_points)), n_obs)
    obs_limit = min(obs_limit, n_points)

    root = Rng(seed)
    par = root.child(0)
    r0 = par.child(0).uniform(*r0_range, (n_traj,))
    growth = par.child(1).uniform(*growth_range, (n_traj,))
    omega = par.child(2).uniform(*omega_range, (n_traj,))
    theta0 = par.child(3).uniform(0.0, 2.0 * np.pi, (n_traj,))
    direction = np.where(par.child(4).uniform(0.0, 1.0, (n_traj,)) < 0.5, -1.0, 1.0)

    t = np.linspace(0.0, 1.0, n_points)
    times = np.tile(t, (n_traj, 1))
    radius = r0[:, None] + growth[:, None] * t[None, :]
    angle = direction[:, None] * (omega[:, None] * t[None, :]) + theta0[:, None]
    clean = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=-1)

    spans = clean.reshape(-1, 2).max(axis=0) - clean.reshape(-1, 2).min(axis=0)
    noise = root.child(1).normal(clean.shape) * (noise_std * spans)[None, None, :]
    points = clean + noise

    obs_rng = root.child(2)
    observed = np.empty((n_traj, n_obs), dtype=np.intp)
    for i in range(n_traj):
        picks = obs_rng.child(i).choice_without_replacement(obs_limit, n_obs)
        observed[i] = np.sort(picks)
    return SpiralSet(times=times, points=points, observed_idx=observed, seed=seed)


def minmax_scale(data: np.ndarray):
    """Per-feature map onto [0, 1] over the leading axes; returns the scaled
    array and the parameters needed to invert it.  A constant feature maps
    to 0 with a warning."""
    data = np.asarray(data, dtype=np.float64)
    if data.size == 0:
        raise ValidationError("cannot scale an empty array")
    flat = data.reshape(-1, data.shape[-1])
    lo = flat.min(axis=0)
    hi = flat.max(axis=0)
    if np.any(hi == lo):
        warnings.warn("constant feature mapped to 0 by min-max scaling",
                      RuntimeWarning, stacklevel=2)
    params = MinMaxParams(lo=lo, hi=hi)
    return params.transform(data), params


def split_indices(n: int, spec: SplitSpec):
    """Deterministic disjoint train/val/test index arrays covering range(n)."""
    if n < 1:
        raise ValidationError(f"cannot split {n} items")
    perm = Rng(spec.seed).permutation(n)
    n_train = int(round(spec.train * n))
    n_val = int(round(spec.val * n))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    return (np.sort(perm[:n_train]),
            np.sort(perm[n_train:n_train + n_val]),
            np.sort(perm[n_train + n_val:]))


def regime_masks(data: SpiralSet):
    """Boolean (n_traj, n_points) masks: held-out interpolation points and
    held-out extrapolation points, split at each trajectory's last observed
    time."""
    n_traj, n_points = data.times.shape
    observed = np.zeros((n_traj, n_points), dtype=bool)
    rows = np.repeat(np.arange(n_traj), data.observed_idx.shape[1])
    observed[rows, data.observed_idx.ravel()] = True
    last_obs = data.observed_idx.max(axis=1)
    beyond = np.arange(n_points)[None, :] > last_obs[:, None]
    interp = ~observed & ~beyond
    extrap = ~observed & beyond
    return interp, extrap


SPIRAL_CSV_HEADER = ["trajectory", "time", "x", "y", "observed"]


def write_spirals_csv(path, data: SpiralSet) -> None:
    """Columnar dump, one row per (trajectory, point): trajectory id, time,
    x, y, observed flag.  Floats are written with full round-trip precision."""
    observed = np.zeros((data.n_traj, data.n_points), dtype=bool)
    rows = np.repeat(np.arange(data.n_traj), data.observed_idx.shape[1])
    observed[rows, data.observed_idx.ravel()] = True
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SPIRAL_CSV_HEADER)
        for i in range(data.n_traj):
            for j in range(data.n_points):
                writer.writerow([
                    i, repr(float(data.times[i, j])),
                    repr(float(data.points[i, j, 0])),
                    repr(float(data.points[i, j, 1])),
                    int(observed[i, j]),
                ])


def read_spirals_csv(path, seed: int = -1) -> SpiralSet:
    """Inverse of :func:`write_spirals_csv`; bit-exact for the float columns."""
    by_traj: dict[int, list] = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = set(SPIRAL_CSV_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise ValidationError(f"{path} lacks columns {sorted(missing)}")
        for row in reader:
            by_traj.setdefault(int(row["trajectory"]), []).append(
                (float(row["time"]), float(row["x"]), float(row["y"]),
                 int(row["observed"])))
    if not by_traj:
        raise ValidationError(f"{path} holds no trajectories")
    n_traj = len(by_traj)
    counts = {len(v) for v in by_traj.values()}
    if len(counts) != 1:
        raise ValidationError("trajectories have unequal lengths")
    n_points = counts.pop()
    times = np.empty((n_traj, n_points))
    points = np.empty((n_traj, n_points, 2))
    observed_lists = []
    for i in range(n_traj):
        if i not in by_traj:
            raise ValidationError(f"trajectory ids must be contiguous, {i} missing")
        rows = by_traj[i]
        times[i] = [r[0] for r in rows]
        points[i, :, 0] = [r[1] for r in rows]
        points[i, :, 1] = [r[2] for r in rows]
        observed_lists.append([j for j, r in enumerate(rows) if r[3]])
    n_obs = {len(o) for o in observed_lists}
    if len(n_obs) != 1:
        raise ValidationError("trajectories have unequal observation counts")
    observed = np.array(observed_lists, dtype=np.intp)
    return SpiralSet(times=times, points=points, observed_idx=observed, seed=seed)
