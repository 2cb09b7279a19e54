"""Training/evaluation orchestration: configs, optimizer, reports.

Two training modes share everything except the schedule: "pode" grows the
model through curriculum stages on progressively richer data, "node" trains
the full-depth architecture on raw data for the same total budget.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .autodiff import Tape, backward
from .curriculum import CurriculumPlan, alpha_at, stage_dataset
from .data import Dataset, denormalize, load_dataset, normalize
from .model import LatentOdeModel
from .ode import IntegrationDivergedError

MODES = ("pode", "node")


class HarnessError(RuntimeError):
    pass


@dataclass
class RunConfig:
    mode: str = "pode"
    dataset: str = ""
    out_dir: str = "runs/out"
    k: int = 3
    epochs_per_stage: int = 100
    cutoffs: tuple = (1.5, 9.0)
    blend_fraction: float = 0.3
    learning_rate: float = 1e-2
    lr_decay: float = 0.995
    batch_size: int = 50
    seed: int = 0
    gru_width: int = 64
    net_width: int = 32
    d_latent: int = 16
    max_step: float = 0.05

    def __post_init__(self):
        if self.mode not in MODES:
            raise HarnessError(f"mode must be one of {MODES}, got {self.mode!r}")
        env_seed = os.environ.get("PODE_SEED")
        if env_seed is not None:
            self.seed = int(env_seed)

    def plan(self):
        return CurriculumPlan(
            k=self.k,
            cutoffs=tuple(self.cutoffs),
            epochs_per_stage=[self.epochs_per_stage] * self.k,
            blend_fraction=self.blend_fraction,
        )

    def echo(self):
        d = asdict(self)
        d["cutoffs"] = list(self.cutoffs)
        return d


def load_config(path, overrides=None):
    """Flat key=value config file; overrides win."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise HarnessError(f"{path}:{lineno}: expected key=value")
            key, _, raw = line.partition("=")
            values[key.strip()] = raw.strip()
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_strings(values)


_INT_KEYS = {"k", "epochs_per_stage", "batch_size", "seed", "gru_width",
             "net_width", "d_latent"}
_FLOAT_KEYS = {"blend_fraction", "learning_rate", "lr_decay", "max_step"}


def config_from_strings(values):
    kwargs = {}
    for key, raw in values.items():
        if key in _INT_KEYS:
            kwargs[key] = int(raw)
        elif key in _FLOAT_KEYS:
            kwargs[key] = float(raw)
        elif key == "cutoffs":
            raw = raw if isinstance(raw, str) else ",".join(map(str, raw))
            kwargs[key] = tuple(float(x) for x in raw.split(",") if x)
        elif key in ("mode", "dataset", "out_dir"):
            kwargs[key] = raw
        else:
            raise HarnessError(f"unknown config key {key!r}")
    return RunConfig(**kwargs)


class Adam:
    """Adaptive-moment gradient descent; per-parameter state keyed by name."""

    def __init__(self, params, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.params = []
        self.state = {}
        self.add_params(params)

    def add_params(self, params):
        for p in params:
            if p.name in self.state:
                continue
            self.params.append(p)
            self.state[p.name] = (np.zeros_like(p.array), np.zeros_like(p.array))

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p in self.params:
            m, v = self.state[p.name]
            g = p.grad
            m[...] = self.beta1 * m + (1.0 - self.beta1) * g
            v[...] = self.beta2 * v + (1.0 - self.beta2) * g * g
            p.array = p.array - lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def _batches(samples, batch_size, rng):
    order = rng.permutation(len(samples))
    for lo in range(0, len(samples), batch_size):
        idx = order[lo: lo + batch_size]
        group = [samples[i] for i in idx]
        times = np.stack([s.times for s in group])
        values = np.stack([s.values for s in group])
        yield times, values, group[0].split_index


def train(config, dataset=None):
    """Run one training job; returns (model, report dict).

    Checkpoints land at <out_dir>/checkpoint_stage<s>.json per stage boundary
    and <out_dir>/checkpoint_final.json at the end; the metrics report at
    <out_dir>/metrics.json contains only deterministic content, with wall
    clock in a separate run_info.json sidecar.
    """
    t_start = time.time()
    raw = dataset if dataset is not None else load_dataset(config.dataset)
    norm_ds = normalize(raw)
    plan = config.plan()
    os.makedirs(config.out_dir, exist_ok=True)

    initial_groups = 1 if config.mode == "pode" else config.k
    model = LatentOdeModel(
        seed=config.seed, k_max=config.k, gru_width=config.gru_width,
        net_width=config.net_width, d_latent=config.d_latent,
        max_step=config.max_step, initial_groups=initial_groups,
    )
    opt = Adam(model.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(config.seed + 1)

    curves = []  # per stage: list of epoch mean losses
    n_updates = 0
    global_epoch = 0
    stages = range(1, plan.k + 1) if config.mode == "pode" else [plan.k]
    epochs_per_stage = (
        plan.epochs_per_stage if config.mode == "pode"
        else [plan.total_epochs]
    )

    for stage_pos, stage in enumerate(stages):
        if config.mode == "pode":
            train_samples = stage_dataset(norm_ds, stage, plan).train
            if stage > 1:
                model.grow_stage()
                opt.add_params(model.parameters())
        else:
            train_samples = norm_ds.train
        stage_curve = []
        for epoch in range(epochs_per_stage[stage_pos]):
            if config.mode == "pode" and stage >= 2:
                model.set_blend_alpha(alpha_at(plan, stage, epoch))
            lr = config.learning_rate * (config.lr_decay ** global_epoch)
            losses = []
            for times, values, split in _batches(train_samples,
                                                 config.batch_size, rng):
                try:
                    with Tape() as tape:
                        loss = model.loss(times, values, split)
                        opt.zero_grad()
                        backward(loss, tape, return_map=False)
                except IntegrationDivergedError as e:
                    raise HarnessError(
                        f"training diverged at stage {stage} epoch {epoch}: {e}"
                    ) from e
                value = loss.item()
                if not np.isfinite(value):
                    raise HarnessError(
                        f"training diverged at stage {stage} epoch {epoch}"
                    )
                opt.step(lr=lr)
                n_updates += 1
                losses.append(value)
            stage_curve.append(float(np.mean(losses)))
            global_epoch += 1
        curves.append(stage_curve)
        model.save(os.path.join(config.out_dir, f"checkpoint_stage{stage}.json"))

    ckpt_path = os.path.join(config.out_dir, "checkpoint_final.json")
    model.save(ckpt_path)

    eval_report = evaluate_model(model, raw, norm_ds.normalizer)
    report = {
        "config": config.echo(),
        "mode": config.mode,
        "train_curves": curves,
        "n_updates": n_updates,
        "train_mse_raw": evaluate_model(model, raw, norm_ds.normalizer,
                                        split_role="train")["mse"],
        "test_mse_raw": eval_report["mse"],
        "per_sample_mse": eval_report["per_sample"],
        "normalizer": {"shift": norm_ds.normalizer.shift,
                       "scale": norm_ds.normalizer.scale},
        "checkpoint": ckpt_path,
    }
    with open(os.path.join(config.out_dir, "metrics.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    with open(os.path.join(config.out_dir, "run_info.json"), "w") as fh:
        json.dump({"wall_clock_sec": time.time() - t_start,
                   "finished_at": time.time()}, fh)
    # the normalizer rides along with the final checkpoint for later eval
    _attach_normalizer(ckpt_path, norm_ds.normalizer)
    return model, report


def _attach_normalizer(ckpt_path, normalizer):
    with open(ckpt_path) as fh:
        blob = json.load(fh)
    blob["normalizer"] = {"shift": normalizer.shift, "scale": normalizer.scale}
    with open(ckpt_path, "w") as fh:
        json.dump(blob, fh)


def _grouped(samples):
    """Group samples by (length, split) so each group batches cleanly."""
    groups = {}
    for i, s in enumerate(samples):
        groups.setdefault((len(s.times), s.split_index), []).append((i, s))
    return groups


def evaluate_model(model, raw_dataset, normalizer, split_role="test"):
    """Forecast-half MSE in raw units, per sample and aggregate."""
    samples = raw_dataset.test if split_role == "test" else raw_dataset.train
    if not samples:
        raise HarnessError(f"no {split_role} samples to evaluate")
    per_sample = [0.0] * len(samples)
    for (_, split), members in _grouped(samples).items():
        idxs = [i for i, _ in members]
        times = np.stack([s.times for _, s in members])
        values_raw = np.stack([s.values for _, s in members])
        values_norm = normalizer.apply(values_raw)
        preds = model.forecast_values(times, values_norm, split)
        preds_raw = denormalize(preds, normalizer)
        errs = np.mean((preds_raw - values_raw[:, split:]) ** 2, axis=1)
        for i, e in zip(idxs, errs):
            per_sample[i] = float(e)
    return {"mse": float(np.mean(per_sample)), "per_sample": per_sample,
            "n_samples": len(samples)}


def evaluate_checkpoint(ckpt_path, dataset_path_or_ds):
    """Load a checkpoint (with its normalizer) and score a dataset's test split."""
    with open(ckpt_path) as fh:
        blob = json.load(fh)
    if "normalizer" not in blob:
        raise HarnessError(f"{ckpt_path} lacks a normalizer; was it finalized?")
    from .data import Normalizer

    model = LatentOdeModel.load(ckpt_path)
    norm = Normalizer(**blob["normalizer"])
    ds = (dataset_path_or_ds if isinstance(dataset_path_or_ds, Dataset)
          else load_dataset(dataset_path_or_ds))
    report = evaluate_model(model, ds, norm)
    report["checkpoint"] = ckpt_path
    report["stage"] = model.stage
    return report
