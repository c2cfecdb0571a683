"""Wiring between datasets, model kinds, and the four tasks.

Tasks: ``cls`` (does the image contain any flash), ``reg`` (how many
flashes in the image), and their per-pixel U-Net forms ``seg_cls`` and
``seg_reg``. Image-level regression keeps only images with at least one
flash, for training and for evaluation. Engineered-feature models
(perceptron, mlp_eng) consume the 36 percentile features; pixel models
consume the raw images.
"""

import numpy as np

from . import data as data_mod
from .errors import TrainingError
from .metrics import roc_auc
from .models import ModelSpec
from .train import TrainConfig

MODEL_KINDS = ("perceptron", "mlp_eng", "mlp_pix", "cnn", "unet")
TASKS = ("cls", "reg", "seg_cls", "seg_reg")

_FEATURE_MODELS = ("perceptron", "mlp_eng")


def compatible(model_kind: str, task: str) -> bool:
    if task in ("seg_cls", "seg_reg"):
        return model_kind == "unet"
    return model_kind != "unet"


def auc_metric(pred, y) -> float:
    return roc_auc(pred.ravel(), y.ravel())[1]


def neg_mae_metric(pred, y) -> float:
    return -float(np.mean(np.abs(pred - y)))


def image_augment_fn(xb, yb, rng, noise_std):
    """Geometric + noise augmentation of image inputs; labels unchanged."""
    out = np.empty_like(xb)
    for i in range(xb.shape[0]):
        k = rng.integer(4)
        flip_ud = rng.uniform() < 0.5
        flip_lr = rng.uniform() < 0.5
        img = data_mod.apply_geometric(xb[i], k, flip_ud, flip_lr)
        if noise_std > 0:
            img = np.clip(img + rng.normal(img.shape, std=noise_std), 0.0, 1.0)
        out[i] = img
    return out, yb


def map_augment_fn(xb, yb, rng, noise_std):
    """Joint augmentation of image inputs and per-pixel label maps."""
    out_x = np.empty_like(xb)
    out_y = np.empty_like(yb)
    for i in range(xb.shape[0]):
        k = rng.integer(4)
        flip_ud = rng.uniform() < 0.5
        flip_lr = rng.uniform() < 0.5
        img = data_mod.apply_geometric(xb[i], k, flip_ud, flip_lr)
        out_y[i] = data_mod.apply_geometric(yb[i], k, flip_ud, flip_lr)
        if noise_std > 0:
            img = np.clip(img + rng.normal(img.shape, std=noise_std), 0.0, 1.0)
        out_x[i] = img
    return out_x, out_y


class TaskData:
    """Resolved model inputs/targets for every split, plus task plumbing."""

    def __init__(self, model_kind, task, dataset):
        if model_kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {model_kind!r}")
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}")
        if not compatible(model_kind, task):
            raise TrainingError(
                f"model {model_kind!r} is incompatible with task {task!r} "
                f"(seg_* tasks require unet, unet supports only seg_*)"
            )
        self.model_kind = model_kind
        self.task = task
        self.classification = task in ("cls", "seg_cls")
        self.metric_name = "auc" if self.classification else "neg_mae"
        self.metric_fn = auc_metric if self.classification else neg_mae_metric
        self.default_loss = "bce" if self.classification else "mse"
        if model_kind in _FEATURE_MODELS:
            self.augment_fn = None
        elif task in ("seg_cls", "seg_reg"):
            self.augment_fn = map_augment_fn
        else:
            self.augment_fn = image_augment_fn
        self.kept_counts = {}
        self.inputs = {}
        self.targets = {}
        for name, split in dataset.splits.items():
            x, y, kept = self._assemble(split)
            self.inputs[name] = x
            self.targets[name] = y
            self.kept_counts[name] = kept

    def _assemble(self, split):
        if self.task == "reg":
            keep = np.nonzero(split.flash_counts() >= 1.0)[0]
            split = split.subset(keep)
            kept = int(keep.shape[0])
        else:
            kept = len(split)
        if self.model_kind in _FEATURE_MODELS:
            x = split.percentile_features()
        else:
            x = split.images
        if self.task == "cls":
            y = split.labels_any()[:, None]
        elif self.task == "reg":
            y = split.flash_counts()[:, None]
        elif self.task == "seg_cls":
            y = split.pixel_labels()[..., None]
        else:
            y = split.flashes[..., None]
        return x, y, kept

    def arrays(self, name):
        return self.inputs[name], self.targets[name]


def default_spec(model_kind: str, task: str, seed: int, overrides: dict = None) -> ModelSpec:
    """Declared default architectures; overrides come from --config."""
    overrides = dict(overrides or {})
    classification = task in ("cls", "seg_cls")
    if model_kind == "unet":
        base = dict(
            kind="unet",
            input_shape=(48, 48, 4),
            depth=3,
            base_filters=8,
            output="sigmoid-map" if classification else "linear-map",
        )
    elif model_kind == "cnn":
        base = dict(
            kind="cnn",
            input_shape=(48, 48, 4),
            conv_blocks=(8, 16, 32),
            dense_head=(64,),
            output="sigmoid-scalar" if classification else "linear-scalar",
        )
    elif model_kind == "mlp_pix":
        base = dict(
            kind="mlp",
            input_shape=(48, 48, 4),
            hidden_layers=(64, 32),
            output="sigmoid-scalar" if classification else "linear-scalar",
        )
    elif model_kind == "mlp_eng":
        base = dict(
            kind="mlp",
            input_shape=(36,),
            hidden_layers=(32, 16),
            output="sigmoid-scalar" if classification else "linear-scalar",
        )
    elif model_kind == "perceptron":
        base = dict(
            kind="perceptron",
            input_shape=(36,),
            output="sigmoid-scalar" if classification else "linear-scalar",
        )
    else:
        raise ValueError(f"unknown model kind {model_kind!r}")
    base["seed"] = seed
    base.update({k: v for k, v in overrides.items() if k in ModelSpec.__dataclass_fields__})
    return ModelSpec(**base)


def default_train_config(model_kind: str, task: str, seed: int,
                         overrides: dict = None) -> TrainConfig:
    overrides = dict(overrides or {})
    epochs = {"cls": 15, "reg": 40, "seg_cls": 10, "seg_reg": 10}[task]
    if model_kind in _FEATURE_MODELS:
        epochs = max(epochs, 60)
    base = dict(
        max_epochs=epochs,
        batch_size=16 if model_kind == "unet" else 32,
        lr=1e-3,
        optimizer="adam",
        loss="bce" if task in ("cls", "seg_cls") else "mse",
        seed=seed,
    )
    fields = TrainConfig.__dataclass_fields__
    base.update({k: v for k, v in overrides.items() if k in fields})
    return TrainConfig(**base)


def search_space(model_kind: str, task: str) -> dict:
    """Random-search ranges: depth/widths/filters, lr, batch size,
    dropout, batch norm, and the loss variant."""
    classification = task in ("cls", "seg_cls")
    space = {
        "lr": ("loguniform", 1e-4, 1e-2),
        "batch_size": [16, 32, 64],
        "dropout_rate": [0.0, 0.1, 0.3],
        "use_batchnorm": [False, True],
    }
    if classification:
        space["loss"] = ["bce", "weighted_bce"]
        space["pos_weight"] = [2.0, 5.0, 10.0]
    else:
        space["loss"] = ["mse", "mae"]
    if model_kind in ("mlp_eng", "mlp_pix"):
        space["hidden_layers"] = [[16], [32], [64], [32, 16], [64, 32]]
    elif model_kind == "cnn":
        space["conv_blocks"] = [[4, 8], [8, 16], [8, 16, 32], [4, 8, 16]]
        space["dense_head"] = [[16], [32], [64]]
    elif model_kind == "unet":
        space["depth"] = [2, 3]
        space["base_filters"] = [4, 8]
    return space
