"""Mini-batch training with plateau stopping, checkpoints, and random search.

All stochasticity is derived per epoch from the config seed (shuffle
order, dropout masks, augmentation draws), so training the same config
twice is bit-identical, and resuming from a checkpoint at epoch k
reproduces an uninterrupted run exactly.
"""

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import container
from .errors import NumericError, TrainingError
from .losses_optim import loss_and_grad, make_optimizer
from .models import Model, ModelSpec, build
from .rng import Rng, derive_seed

_SHUFFLE = 101
_DROPOUT = 102
_AUGMENT = 103
_TRIAL_CONFIG = 104
_TRIAL_SEED = 105

LOG_CSV_HEADER = "epoch,train_loss,val_loss,val_metric,seconds"
CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    max_epochs: int
    batch_size: int = 32
    lr: float = 1e-3
    optimizer: str = "adam"
    loss: str = "bce"
    pos_weight: float = None
    plateau_epsilon: float = 1e-6
    patience: int = 5
    augment: bool = False
    noise_std: float = 0.01
    seed: int = 0
    # validation loss is always computed (plateau stopping needs it);
    # this gates the heavier per-epoch validation metric
    eval_every_epoch: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    stopping_reason: str = None

    def to_csv(self) -> str:
        lines = [LOG_CSV_HEADER]
        for r in self.rows:
            lines.append(
                f"{r['epoch']},{r['train_loss']!r},{r['val_loss']!r},"
                f"{r['val_metric']!r},{r['seconds']!r}"
            )
        return "\n".join(lines) + "\n"

    def plateau_streak(self, eps: float) -> int:
        """Consecutive trailing epoch pairs whose val loss moved < eps."""
        streak = 0
        losses = [r["val_loss"] for r in self.rows]
        for prev, cur in zip(losses[:-1], losses[1:]):
            if abs(cur - prev) < eps:
                streak += 1
            else:
                streak = 0
        return streak


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """Sample visit order for one epoch (derived from the config seed)."""
    return Rng(derive_seed(seed, _SHUFFLE, epoch)).permutation(n)


def train(model: Model, train_x, train_y, val_x, val_y, cfg: TrainConfig,
          optimizer=None, start_epoch: int = 0, log: TrainLog = None,
          augment_fn=None, metric_fn=None):
    """Run the epoch loop; returns (model, TrainLog).

    Each epoch shuffles with an epoch-derived seed, walks the batches
    (final partial batch kept; the loss mean already weights it by its
    true size), and stops early once the validation loss has moved less
    than plateau_epsilon for `patience` consecutive epochs.
    """
    n = train_x.shape[0]
    if n == 0:
        raise TrainingError("empty training set")
    opt = optimizer if optimizer is not None else make_optimizer(cfg.optimizer, cfg.lr)
    log = log if log is not None else TrainLog()
    if cfg.augment and augment_fn is None:
        raise TrainingError("cfg.augment set but no augment_fn supplied for this task")

    stopped = False
    for epoch in range(start_epoch, cfg.max_epochs):
        t0 = time.perf_counter()
        model.reseed_stochastic(derive_seed(cfg.seed, _DROPOUT, epoch))
        order = epoch_order(cfg.seed, epoch, n)
        aug_rng = Rng(derive_seed(cfg.seed, _AUGMENT, epoch)) if cfg.augment else None
        model.set_mode("train")
        total = 0.0
        for bi, b0 in enumerate(range(0, n, cfg.batch_size)):
            idx = order[b0 : b0 + cfg.batch_size]
            xb, yb = train_x[idx], train_y[idx]
            if cfg.augment:
                xb, yb = augment_fn(xb, yb, aug_rng, cfg.noise_std)
            out = model.forward(xb)
            value, grad = loss_and_grad(cfg.loss, out, yb, cfg.pos_weight)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            model.backward(grad)
            opt.step(model.parameters(), model.gradients())
            total += value * idx.shape[0]
        train_loss = total / n

        val_pred = model.predict(val_x)
        val_loss, _ = loss_and_grad(cfg.loss, val_pred, val_y, cfg.pos_weight)
        want_metric = cfg.eval_every_epoch or epoch == cfg.max_epochs - 1
        val_metric = metric_fn(val_pred, val_y) \
            if (metric_fn is not None and want_metric) else float("nan")
        log.rows.append({
            "epoch": epoch,
            "train_loss": float(train_loss),
            "val_loss": float(val_loss),
            "val_metric": float(val_metric),
            "seconds": time.perf_counter() - t0,
        })
        if log.plateau_streak(cfg.plateau_epsilon) >= cfg.patience:
            log.stopping_reason = "plateau"
            stopped = True
            break
    if not stopped:
        log.stopping_reason = "max_epochs"
    model.set_mode("inference")
    return model, log


def save_checkpoint(path, model: Model, optimizer, next_epoch: int,
                    log: TrainLog, cfg: TrainConfig) -> None:
    arrays = {f"param.{k}": v for k, v in model.parameters().items()}
    arrays.update({f"buffer.{k}": v for k, v in model.buffers().items()})
    arrays.update({f"opt.{k}": v for k, v in optimizer.state_arrays().items()})
    meta = {
        "checkpoint": {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "spec": model.spec.to_dict(),
            "optimizer_kind": optimizer.kind,
            "optimizer_lr": optimizer.lr,
            "optimizer_t": optimizer.t,
            "next_epoch": next_epoch,
            "cfg": asdict(cfg),
            "log_rows": log.rows,
            "stopping_reason": log.stopping_reason,
        }
    }
    container.write_blob_file(path, meta, arrays)


def load_checkpoint(path):
    """Returns (model, optimizer, next_epoch, log, cfg)."""
    meta, arrays = container.read_blob_file(path)
    ck = meta.get("checkpoint")
    if ck is None or ck.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise container.ContainerError("missing or unsupported checkpoint manifest")
    model = build(ModelSpec.from_dict(ck["spec"]))
    for name, arr in model.parameters().items():
        np.copyto(arr, arrays[f"param.{name}"])
    for name, arr in model.buffers().items():
        np.copyto(arr, arrays[f"buffer.{name}"])
    optimizer = make_optimizer(ck["optimizer_kind"], ck["optimizer_lr"])
    optimizer.load_state(
        {k[len("opt."):]: v for k, v in arrays.items() if k.startswith("opt.")},
        ck["optimizer_t"],
    )
    log = TrainLog(rows=list(ck["log_rows"]), stopping_reason=ck["stopping_reason"])
    cfg = TrainConfig(**ck["cfg"])
    return model, optimizer, ck["next_epoch"], log, cfg


def sample_config(space: dict, rng: Rng) -> dict:
    """Uniformly sample one configuration from a search space.

    Values are either a list of choices, ("uniform", lo, hi), or
    ("loguniform", lo, hi).
    """
    out = {}
    for key in sorted(space):
        spec = space[key]
        if isinstance(spec, (list, tuple)) and spec and spec[0] == "uniform":
            out[key] = rng.uniform(low=spec[1], high=spec[2])
        elif isinstance(spec, (list, tuple)) and spec and spec[0] == "loguniform":
            out[key] = float(np.exp(rng.uniform(low=np.log(spec[1]), high=np.log(spec[2]))))
        else:
            choices = list(spec)
            out[key] = choices[rng.integer(len(choices))]
    return out


def hyperparameter_search(space: dict, n_trials: int, run_trial, seed: int,
                          higher_better: bool = True):
    """Random search: sample n_trials configs, train each, rank by the
    validation metric. run_trial(config, trial_seed) returns
    (metric, payload_dict, model); trials that raise a training or
    numeric error are recorded as failed, not fatal.

    Returns (ranked results list, best model or None).
    """
    if n_trials < 1:
        raise ValueError(f"n_trials must be >= 1, got {n_trials}")
    results = []
    best_model = None
    best_metric = None
    for t in range(n_trials):
        config = sample_config(space, Rng(derive_seed(seed, _TRIAL_CONFIG, t)))
        entry = {"trial": t, "config": config, "metric": None, "status": "failed"}
        try:
            metric, payload, model = run_trial(config, derive_seed(seed, _TRIAL_SEED, t))
        except (TrainingError, NumericError, FloatingPointError):
            results.append(entry)
            continue
        entry["metric"] = float(metric)
        entry["status"] = "ok"
        entry.update(payload)
        results.append(entry)
        better = best_metric is None or (
            metric > best_metric if higher_better else metric < best_metric
        )
        if better:
            best_metric = metric
            best_model = model
    sign = -1.0 if higher_better else 1.0
    results.sort(key=lambda e: (e["status"] != "ok",
                                sign * e["metric"] if e["metric"] is not None else 0.0,
                                e["trial"]))
    return results, best_model
