"""Experiment orchestration over the spiral benchmark.

A trajectory becomes a token sequence: one token per observed point carrying
(time, x, y, 1), plus query tokens carrying (time, 0, 0, 0) at the times to
predict.  The layer attends across the whole sequence and the first two
output dimensions at the query positions are the predicted coordinates.
Training samples fresh query subsets every step; evaluation queries every
held-out point and scores interpolation and extrapolation separately.

Run directories are self-describing: a config snapshot, the seed, the
checkpoint with its content hash, and the per-step loss log.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Rng
from .checkpoint import load_checkpoint, save_checkpoint
from .datasets import (
    SpiralSet,
    SplitSpec,
    generate_spirals,
    minmax_scale,
    regime_masks,
    split_indices,
)
from .errors import ValidationError
from .layer import (
    NsacConfig,
    NsacLayer,
    NsacRegressor,
    UncertaintyDecomposition,
    decompose_uncertainty,
)
from .losses import (
    LossBreakdown,
    OodParams,
    member_mean_variance,
    perturb_ood,
    train_step,
)
from .metrics import (
    MetricsReport,
    aggregate_reports,
    evaluate,
    write_report_json,
)
from .optim import AdamW

TRAIN_LOG_HEADER = ["step", "nll", "reg", "total", "var_id", "var_ood"]
PREDICTIONS_HEADER = ["trajectory", "point", "dim", "t", "regime",
                      "y", "mu", "sigma", "aleatoric", "epistemic"]
DECOMPOSE_HEADER = ["trajectory", "point", "dim", "t", "y", "mu",
                    "aleatoric", "epistemic"]

ABLATION_AXES = {
    "heads": [1, 2, 4, 8, 16, 32],
    "sparsity": [0.1, 0.3, 0.5, 0.7, 0.9],
    "top_k": [2, 4, 8, 16, 32],
    "mc_samples": [1, 5, 10, 15, 20],
    "mu_pert": [0.0, 1.0, 2.5, 5.0],
    "sigma_pert": [0.1, 1.0, 5.0, 10.0, 15.0],
    "lambda": [0.0, 0.01, 0.1, 1.0],
}
ABLATION_EPOCHS = 30

TIME_FREQUENCIES = (1.0, 2.0, 4.0, 8.0)
TIME_FEATURE_SCALES = (1.0, 1.0, 4.0, 4.0)
TOKEN_DIM = 4 + 2 * len(TIME_FREQUENCIES)


def time_features(times: np.ndarray) -> np.ndarray:
    """Sinusoidal encodings of unit-interval times, one sin/cos pair per
    frequency.  Dot products between encodings fall off with time distance,
    which lets key curation find temporal neighbours before any training.

    The two highest frequencies are amplified so the sensory tanh units that
    read them sit near saturation: their signs then act as a locality hash
    of the time axis that weight drift during training is too small to
    flip, keeping curation time-local long after the tied q/k
    initialisation has decayed.  The low frequencies stay at unit amplitude
    so the gate backbone keeps a smooth, linear read of absolute time."""
    cols = []
    for f, s in zip(TIME_FREQUENCIES, TIME_FEATURE_SCALES):
        cols.append(s * np.sin(2.0 * np.pi * f * times))
        cols.append(s * np.cos(2.0 * np.pi * f * times))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class DatasetConfig:
    n_traj: int = 300
    n_points: int = 150
    n_obs: int = 50
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_obs <= self.n_points or self.n_traj < 3:
            raise ValidationError("dataset needs n_obs in [1, n_points] and n_traj >= 3")


@dataclass(frozen=True)
class RunConfig:
    """Everything one experiment needs; see config_schema() for the file format."""

    task: str = "spiral"
    model: NsacConfig = field(default_factory=lambda: NsacConfig(d_in=TOKEN_DIM))
    ood: OodParams = field(default_factory=OodParams)
    lam: float = 0.1
    epochs: int = 100
    batch_size: int = 64
    lr: float = 0.001
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.01
    seeds: tuple = (0, 1, 2, 3, 4)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    queries_per_sequence: int = 24
    reg_eps: float = 1e-8
    reduce: str = "var_then_mean"

    def __post_init__(self):
        if self.task != "spiral":
            raise ValidationError(f"unknown task {self.task!r}")
        if self.lam < 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValidationError("lambda >= 0, epochs >= 0, batch_size >= 1 required")
        if self.lr <= 0 or self.weight_decay < 0 or self.reg_eps <= 0:
            raise ValidationError("lr > 0, weight_decay >= 0, reg_eps > 0 required")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ValidationError(f"betas must be two values in [0, 1), got {self.betas}")
        if not self.seeds or any(s < 0 for s in self.seeds):
            raise ValidationError("seeds must be a nonempty list of nonnegative ints")
        if not 1 <= self.queries_per_sequence <= self.dataset.n_points:
            raise ValidationError(
                "queries_per_sequence must be in [1, dataset.n_points]")
        if self.model.input_dim != TOKEN_DIM:
            raise ValidationError(
                f"the spiral task feeds {TOKEN_DIM} features; set model "
                f"d_in = {TOKEN_DIM}")


def config_to_dict(cfg: RunConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["model"] = dataclasses.asdict(cfg.model)
    out["ood"] = dataclasses.asdict(cfg.ood)
    out["dataset"] = dataclasses.asdict(cfg.dataset)
    out["lambda"] = out.pop("lam")
    out["betas"] = list(cfg.betas)
    out["seeds"] = list(cfg.seeds)
    return out


def config_from_dict(raw: dict) -> RunConfig:
    known = {f.name for f in dataclasses.fields(RunConfig)} | {"lambda"}
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    kwargs = dict(raw)
    if "lambda" in kwargs:
        kwargs["lam"] = kwargs.pop("lambda")
    for key, cls in (("model", NsacConfig), ("ood", OodParams),
                     ("dataset", DatasetConfig)):
        if key in kwargs and isinstance(kwargs[key], dict):
            kwargs[key] = cls(**kwargs[key])
    if "betas" in kwargs:
        kwargs["betas"] = tuple(kwargs["betas"])
    if "seeds" in kwargs:
        kwargs["seeds"] = tuple(int(s) for s in kwargs["seeds"])
    return RunConfig(**kwargs)


def load_run_config(path) -> RunConfig:
    try:
        with open(path) as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ValidationError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ValidationError(f"config {path} must hold a JSON object")
    return config_from_dict(raw)


def default_spiral_config(**overrides) -> RunConfig:
    base = config_to_dict(RunConfig())
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            base[key] = {**base[key], **value}
        else:
            base[key] = value
    return config_from_dict(base)


class SpiralTask:
    """Dataset plus everything derived from it: scaler, splits, token grid.

    Every trajectory becomes a full time grid of tokens in temporal order.
    Observed slots carry their (noisy, scaled) coordinates with flag 1;
    held-out slots carry a linear fill of the observed points (constant
    beyond the last observation) with flag 0, so no token ever uses
    held-out values.  Temporal order matters: key curation scores
    position-contiguous blocks, so ordered tokens make every block a local
    time window mixing real and filled entries.
    """

    def __init__(self, cfg: RunConfig):
        d = cfg.dataset
        self.data: SpiralSet = generate_spirals(
            n_traj=d.n_traj, n_points=d.n_points, n_obs=d.n_obs, seed=d.seed)
        self.train_ids, self.val_ids, self.test_ids = split_indices(
            d.n_traj, SplitSpec(seed=d.seed))
        obs = np.take_along_axis(
            self.data.points, self.data.observed_idx[:, :, None], axis=1)
        train_obs = obs[self.train_ids].reshape(-1, 2)
        _, self.scaler = minmax_scale(train_obs)
        self.coords = self.scaler.transform(self.data.points)
        self.interp_mask, self.extrap_mask = regime_masks(self.data)
        held_out = self.interp_mask | self.extrap_mask
        self.unobserved_idx = np.array(
            [np.flatnonzero(held_out[i]) for i in range(d.n_traj)], dtype=np.intp)

        grid = np.zeros((d.n_traj, d.n_points, TOKEN_DIM))
        grid[:, :, 0] = self.data.times
        grid[:, :, 3] = ~held_out
        grid[:, :, 4:] = time_features(self.data.times)
        xy_obs = self.scaler.transform(obs)
        for i in range(d.n_traj):
            t_obs = self.data.times[i, self.data.observed_idx[i]]
            for dim in range(2):
                grid[i, :, 1 + dim] = np.interp(
                    self.data.times[i], t_obs, xy_obs[i, :, dim])
            grid[i, self.data.observed_idx[i], 1:3] = xy_obs[i]
        self.grid = grid

    def split_ids(self, name: str) -> np.ndarray:
        try:
            return {"train": self.train_ids, "val": self.val_ids,
                    "test": self.test_ids}[name]
        except KeyError:
            raise ValidationError(f"split must be train, val, or test, got {name!r}")

    def assemble(self, traj_ids: np.ndarray, slots: np.ndarray):
        """Token batch for the given trajectories, supervised at the given
        grid slots (shared across the batch); returns
        (x, y, t_sample, query_positions)."""
        x = self.grid[traj_ids]
        y = self.coords[traj_ids][:, slots]
        t_sample = x[:, :, 0]
        return x, y, t_sample, np.asarray(slots, dtype=np.intp)


def build_model(cfg: RunConfig, seed: int) -> NsacRegressor:
    layer_cfg = dataclasses.replace(cfg.model, seed=seed)
    return NsacRegressor(NsacLayer(layer_cfg), out_dim=2)


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def train_run(cfg: RunConfig, seed: int, out_dir, task: SpiralTask | None = None,
              epochs: int | None = None, log_every: int = 1):
    """Train one seed; writes checkpoint.npz, train_log.csv, config.json,
    run_meta.json into ``out_dir``.  Returns (model, breakdown list)."""
    os.makedirs(out_dir, exist_ok=True)
    task = task or SpiralTask(cfg)
    epochs = cfg.epochs if epochs is None else epochs
    model = build_model(cfg, seed)
    opt = AdamW(model.parameters(), lr=cfg.lr, betas=cfg.betas,
                weight_decay=cfg.weight_decay)
    root = Rng(seed)
    batch_rng = root.child(1)
    noise_rng = root.child(2)

    train_ids = task.split_ids("train")
    n_batches = max(1, math.ceil(len(train_ids) / cfg.batch_size))
    log: list[LossBreakdown] = []
    step = 0
    rows = []
    for epoch in range(epochs):
        order = train_ids[batch_rng.child(epoch).permutation(len(train_ids))]
        for b in range(n_batches):
            ids = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            if ids.size == 0:
                continue
            step_rng = batch_rng.child(epochs + step)
            slots = step_rng.choice_without_replacement(
                cfg.dataset.n_points, cfg.queries_per_sequence)
            x, y, t_sample, qpos = task.assemble(ids, slots)
            bd = train_step((x, y), model, opt, cfg.model.mc_samples, cfg.ood,
                            cfg.lam, noise_rng.child(step), t_sample=t_sample,
                            query_positions=qpos, eps=cfg.reg_eps,
                            reduce=cfg.reduce)
            log.append(bd)
            if step % log_every == 0:
                rows.append([step, repr(bd.nll), repr(bd.reg), repr(bd.total),
                             repr(bd.var_id), repr(bd.var_ood)])
            step += 1

    _write_rows(os.path.join(out_dir, "train_log.csv"), TRAIN_LOG_HEADER, rows)
    digest = save_checkpoint(
        os.path.join(out_dir, "checkpoint.npz"), model, optimizer=opt,
        extra={"seed": seed, "epochs": epochs, "task": cfg.task})
    snapshot = config_to_dict(cfg)
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump(snapshot, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(os.path.join(out_dir, "run_meta.json"), "w") as f:
        json.dump({"seed": seed, "epochs": epochs,
                   "checkpoint_sha256": digest, "config": snapshot},
                  f, indent=2, sort_keys=True)
        f.write("\n")
    return model, log


@dataclass
class EvalResult:
    overall: MetricsReport
    interpolation: MetricsReport
    extrapolation: MetricsReport
    mse_interp: float
    mse_extrap: float
    rows: list


EVAL_CHUNK = 32


def _mc_over_grid(model: NsacRegressor, task: SpiralTask, ids: np.ndarray,
                  n_mc: int, rng: Rng):
    """Full-grid MC prediction for the given trajectories, chunked so the
    forward graph of a large split stays within memory.  Returns
    (y, mean of member means, UncertaintyDecomposition) over all slots."""
    all_slots = np.arange(task.data.n_points)
    mu_parts, al_parts, ep_parts, y_parts = [], [], [], []
    for ci, lo in enumerate(range(0, len(ids), EVAL_CHUNK)):
        chunk = ids[lo:lo + EVAL_CHUNK]
        x, y, t_sample, qpos = task.assemble(chunk, all_slots)
        ens = model.mc_predict(x, n_mc, rng.child(ci), t_sample=t_sample,
                               query_positions=qpos)
        mus, _ = ens.stacked()
        mu_parts.append(mus.mean(axis=0))
        dec = decompose_uncertainty(ens)
        al_parts.append(dec.aleatoric)
        ep_parts.append(dec.epistemic)
        y_parts.append(y)
    return (np.concatenate(y_parts), np.concatenate(mu_parts),
            UncertaintyDecomposition(np.concatenate(al_parts),
                                     np.concatenate(ep_parts)))


def eval_model(model: NsacRegressor, task: SpiralTask, split: str,
               n_mc: int | None = None, eval_seed: int = 0) -> EvalResult:
    """Score every held-out point of a split with the MC predictive
    distribution: mean of member means, std sqrt(aleatoric + epistemic)."""
    ids = task.split_ids(split)
    n_mc = n_mc if n_mc is not None else model.layer.cfg.mc_samples
    y, mu_bar, dec = _mc_over_grid(model, task, ids, n_mc, Rng(eval_seed).child(3))
    sigma = np.sqrt(dec.aleatoric + dec.epistemic)

    rows = []
    flat = {"y": [], "mu": [], "sigma": [], "regime": []}
    for bi, traj in enumerate(ids):
        for pt in task.unobserved_idx[traj]:
            regime = ("extrapolation" if task.extrap_mask[traj, pt]
                      else "interpolation")
            for dim in range(2):
                rec = (float(y[bi, pt, dim]), float(mu_bar[bi, pt, dim]),
                       float(sigma[bi, pt, dim]))
                flat["y"].append(rec[0])
                flat["mu"].append(rec[1])
                flat["sigma"].append(rec[2])
                flat["regime"].append(regime)
                rows.append([int(traj), int(pt), dim,
                             repr(float(task.data.times[traj, pt])), regime,
                             repr(rec[0]), repr(rec[1]), repr(rec[2]),
                             repr(float(dec.aleatoric[bi, pt, dim])),
                             repr(float(dec.epistemic[bi, pt, dim]))])

    y_all = np.array(flat["y"])
    mu_all = np.array(flat["mu"])
    s_all = np.array(flat["sigma"])
    regime_all = np.array(flat["regime"])
    overall = evaluate((y_all, mu_all, s_all))
    interp_sel = regime_all == "interpolation"
    reports = {}
    for name, sel in (("interpolation", interp_sel), ("extrapolation", ~interp_sel)):
        reports[name] = evaluate((y_all[sel], mu_all[sel], s_all[sel]))
    return EvalResult(
        overall=overall,
        interpolation=reports["interpolation"],
        extrapolation=reports["extrapolation"],
        mse_interp=reports["interpolation"].mse,
        mse_extrap=reports["extrapolation"].mse,
        rows=rows,
    )


def epistemic_ratio(model: NsacRegressor, task: SpiralTask, split: str,
                    p: OodParams, n_mc: int | None = None, eval_seed: int = 0,
                    reduce: str = "var_then_mean"):
    """Eval-time analogue of the regularizer's inputs: mean epistemic
    variance under perturbed inputs over the clean-input value.  Returns
    (ratio, var_id, var_ood)."""
    ids = task.split_ids(split)
    n_mc = n_mc if n_mc is not None else model.layer.cfg.mc_samples
    root = Rng(eval_seed).child(4)
    all_slots = np.arange(task.data.n_points)
    acc_id = acc_ood = 0.0
    weight = 0
    for ci, lo in enumerate(range(0, len(ids), EVAL_CHUNK)):
        chunk = ids[lo:lo + EVAL_CHUNK]
        x, _, t_sample, qpos = task.assemble(chunk, all_slots)
        crng = root.child(ci)
        ens_id = model.mc_predict(x, n_mc, crng.child(0), t_sample=t_sample,
                                  query_positions=qpos)
        x_ood = perturb_ood(x, p, crng.child(1))
        ens_ood = model.mc_predict(x_ood, n_mc, crng.child(2),
                                   t_sample=t_sample, query_positions=qpos)
        acc_id += len(chunk) * float(member_mean_variance(ens_id, reduce=reduce).data)
        acc_ood += len(chunk) * float(member_mean_variance(ens_ood, reduce=reduce).data)
        weight += len(chunk)
    var_id = acc_id / weight
    var_ood = acc_ood / weight
    return var_ood / var_id, var_id, var_ood


def eval_run(cfg: RunConfig, checkpoint_path, out_dir, split: str = "test",
             task: SpiralTask | None = None, n_mc: int | None = None) -> EvalResult:
    """Evaluate a checkpoint and write predictions_<split>.csv plus one
    MetricsReport JSON per regime and overall."""
    os.makedirs(out_dir, exist_ok=True)
    model, meta, _ = load_checkpoint(checkpoint_path)
    if not isinstance(model, NsacRegressor):
        raise ValidationError("this checkpoint holds a bare layer, not a task model")
    if meta["extra"].get("task", cfg.task) != cfg.task:
        raise ValidationError(
            f"checkpoint was trained on task {meta['extra'].get('task')!r}, "
            f"config asks for {cfg.task!r}")
    task = task or SpiralTask(cfg)
    result = eval_model(model, task, split, n_mc=n_mc,
                        eval_seed=int(meta["extra"].get("seed", 0)))
    _write_rows(os.path.join(out_dir, f"predictions_{split}.csv"),
                PREDICTIONS_HEADER, result.rows)
    for name, rep in (("overall", result.overall),
                      ("interpolation", result.interpolation),
                      ("extrapolation", result.extrapolation)):
        write_report_json(os.path.join(out_dir, f"report_{split}_{name}.json"), rep)
    return result


def aggregate_seed_reports(results, out_path) -> dict:
    """Mean ± std across seeds for each regime; written as JSON and returned."""
    out = {}
    for name in ("overall", "interpolation", "extrapolation"):
        agg = aggregate_reports([getattr(r, name) for r in results])
        out[name] = {k: {"mean": m, "std": s, "text": f"{m:.6f} ± {s:.6f}"}
                     for k, (m, s) in agg.items()}
    with open(out_path, "w") as f:
        json.dump(out, f, indent=2, sort_keys=True)
        f.write("\n")
    return out


def decompose_run(cfg: RunConfig, checkpoint_path, out_dir, split: str = "test",
                  task: SpiralTask | None = None) -> str:
    """Per-point uncertainty decomposition CSV for external plotting."""
    os.makedirs(out_dir, exist_ok=True)
    model, meta, _ = load_checkpoint(checkpoint_path)
    if not isinstance(model, NsacRegressor):
        raise ValidationError("this checkpoint holds a bare layer, not a task model")
    task = task or SpiralTask(cfg)
    ids = task.split_ids(split)
    n_mc = model.layer.cfg.mc_samples
    y, mu_bar, dec = _mc_over_grid(
        model, task, ids, n_mc, Rng(int(meta["extra"].get("seed", 0))).child(3))
    rows = []
    for bi, traj in enumerate(ids):
        for pt in task.unobserved_idx[traj]:
            for dim in range(2):
                rows.append([int(traj), int(pt), dim,
                             repr(float(task.data.times[traj, pt])),
                             repr(float(y[bi, pt, dim])),
                             repr(float(mu_bar[bi, pt, dim])),
                             repr(float(dec.aleatoric[bi, pt, dim])),
                             repr(float(dec.epistemic[bi, pt, dim]))])
    path = os.path.join(out_dir, f"decompose_{split}.csv")
    _write_rows(path, DECOMPOSE_HEADER, rows)
    return path


def _apply_axis(cfg: RunConfig, axis: str, value):
    if axis == "lambda":
        return dataclasses.replace(cfg, lam=float(value))
    if axis in ("mu_pert", "sigma_pert"):
        return dataclasses.replace(
            cfg, ood=dataclasses.replace(cfg.ood, **{axis: float(value)}))
    field_name = {"heads": "num_heads", "top_k": "top_k",
                  "sparsity": "sparsity", "mc_samples": "mc_samples"}[axis]
    caster = float if axis == "sparsity" else int
    return dataclasses.replace(
        cfg, model=dataclasses.replace(cfg.model, **{field_name: caster(value)}))


ABLATE_HEADER = ["axis", "value", "seed", "mse_interp", "mse_extrap",
                 "mse", "nll", "crps", "ece", "auroc"]


def ablate_run(cfg: RunConfig, axis: str, out_dir, values=None, seeds=None,
               epochs: int = ABLATION_EPOCHS, split: str = "test") -> str:
    """Train and evaluate along one hyperparameter axis at a reduced epoch
    budget; one CSV row per (value, seed)."""
    if axis not in ABLATION_AXES:
        raise ValidationError(
            f"axis must be one of {sorted(ABLATION_AXES)}, got {axis!r}")
    os.makedirs(out_dir, exist_ok=True)
    values = ABLATION_AXES[axis] if values is None else values
    seeds = cfg.seeds if seeds is None else seeds
    rows = []
    for value in values:
        point_cfg = _apply_axis(cfg, axis, value)
        task = SpiralTask(point_cfg)
        for seed in seeds:
            run_dir = os.path.join(out_dir, f"{axis}_{value}_seed{seed}")
            model, _ = train_run(point_cfg, seed, run_dir, task=task,
                                 epochs=epochs)
            res = eval_model(model, task, split, eval_seed=seed)
            rep = res.overall
            rows.append([axis, value, seed,
                         repr(res.mse_interp), repr(res.mse_extrap),
                         repr(rep.mse), repr(rep.nll), repr(rep.crps),
                         repr(rep.ece), repr(rep.auroc)])
    path = os.path.join(out_dir, f"ablate_{axis}.csv")
    _write_rows(path, ABLATE_HEADER, rows)
    return path
