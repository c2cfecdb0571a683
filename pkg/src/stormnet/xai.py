"""Model-agnostic explainability: permutation importance and additive
gradient attributions.

Permutation importance shuffles one feature group at a time (for image
inputs: first the pixels within each image, then the image order, per
channel) and reports the metric degradation, repeated over resampled
evaluation subsets. The multi-pass variant greedily freezes the most
damaging group and repeats on the rest.

Attributions use the expected-gradients estimator: path integrals of
the input gradient from background samples to the input, which are
additive by construction (attributions + mean background output =
model output, up to the reported residual) and exact for linear models.
"""

import json
from dataclasses import dataclass, asdict

import numpy as np

from .metrics import roc_auc
from .rng import Rng, derive_seed

_RESAMPLE = 201
_GROUP = 202
_MULTI = 203
_ALPHA = 204

DEFAULT_GROUPS = {"vil": (0,), "ir": (1,), "wv": (2,), "vis": (3,)}

IMPORTANCE_CSV_HEADER = "channel,mean_importance,stddev"


def _metric_fn(name: str):
    if name == "auc":
        return lambda scores, labels: roc_auc(scores, labels)[1]
    if name == "neg_mae":
        return lambda scores, labels: -float(np.mean(np.abs(scores - labels)))
    raise ValueError(f"unknown importance metric {name!r}")


def _check_partition(groups: dict, n_features: int):
    seen = []
    for channels in groups.values():
        seen.extend(channels)
    if sorted(seen) != list(range(n_features)):
        raise ValueError(
            f"groups must partition the {n_features} feature channels, got {groups}"
        )


def shuffle_image_group(images, channels, rng: Rng):
    """Shuffle one channel group: pixels within each image, then the
    image order along the batch, leaving other channels aligned."""
    out = images.copy()
    n, h, w = images.shape[:3]
    for c in channels:
        for i in range(n):
            flat = out[i, :, :, c].ravel()
            out[i, :, :, c] = flat[rng.permutation(h * w)].reshape(h, w)
        out[:, :, :, c] = out[rng.permutation(n), :, :, c]
    return out


def shuffle_feature_group(features, columns, rng: Rng):
    """Shuffle one column group of a feature table across rows (jointly,
    so the group stays internally consistent)."""
    out = features.copy()
    order = rng.permutation(features.shape[0])
    cols = list(columns)
    out[:, cols] = out[order][:, cols]
    return out


@dataclass
class ImportanceResult:
    mode: str
    metric: str
    group_names: list
    n_resamples: int
    sample_size: int
    base_mean: float
    base_std: float
    importance_mean: dict
    importance_std: dict
    final_mean: float = None
    final_std: float = None
    elimination_orders: list = None
    mean_rank: dict = None

    def ranked_groups(self) -> list:
        return sorted(self.group_names, key=lambda g: -self.importance_mean[g])

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def to_csv(self) -> str:
        lines = [IMPORTANCE_CSV_HEADER]
        for g in self.group_names:
            lines.append(f"{g},{self.importance_mean[g]!r},{self.importance_std[g]!r}")
        return "\n".join(lines) + "\n"


def permutation_importance(predict_fn, inputs, labels, metric: str = "auc",
                           groups: dict = None, mode: str = "single",
                           n_resamples: int = 30, sample_size: int = 250,
                           seed: int = 0, input_kind: str = "image") -> ImportanceResult:
    """Single- or multi-pass backward permutation importance.

    predict_fn maps a batch of inputs to scores comparable against
    ``labels`` under ``metric`` (higher is better). Each resample draws
    ``sample_size`` rows without replacement, scores the intact subset,
    then scores group shuffles; importance is the degradation from the
    resample's base score (single) or from the score before that
    group's elimination (multi).
    """
    if mode not in ("single", "multi"):
        raise ValueError(f"unknown mode {mode!r}")
    if input_kind not in ("image", "feature"):
        raise ValueError(f"unknown input_kind {input_kind!r}")
    n = inputs.shape[0]
    if sample_size > n:
        raise ValueError(f"sample_size {sample_size} exceeds dataset size {n}")
    if groups is None:
        if input_kind == "image":
            groups = {k: v for k, v in DEFAULT_GROUPS.items()}
        else:
            raise ValueError("feature inputs require explicit groups")
    n_features = inputs.shape[-1] if input_kind == "image" else inputs.shape[1]
    _check_partition(groups, n_features)
    shuffle = shuffle_image_group if input_kind == "image" else shuffle_feature_group
    score_of = _metric_fn(metric)
    names = list(groups)

    bases = []
    finals = []
    orders = []
    drops = {g: [] for g in names}
    ranks = {g: [] for g in names}
    for r in range(n_resamples):
        rng = Rng(derive_seed(seed, _RESAMPLE, r))
        idx = rng.permutation(n)[:sample_size]
        x_r, y_r = inputs[idx], labels[idx]
        base = score_of(predict_fn(x_r), y_r)
        bases.append(base)
        if mode == "single":
            for g in names:
                # derive the shuffle stream from the group's channels, not
                # its position, so importances are order-invariant
                g_rng = Rng(derive_seed(seed, _RESAMPLE, r, _GROUP, *groups[g]))
                shuffled = shuffle(x_r, groups[g], g_rng)
                drops[g].append(base - score_of(predict_fn(shuffled), y_r))
        else:
            remaining = list(range(len(names)))
            frozen = x_r
            prev_score = base
            order_r = []
            for step in range(len(names)):
                candidates = []
                for gi in remaining:
                    g_rng = Rng(derive_seed(seed, _RESAMPLE, r, _MULTI, step,
                                            *groups[names[gi]]))
                    cand = shuffle(frozen, groups[names[gi]], g_rng)
                    candidates.append((score_of(predict_fn(cand), y_r), gi, cand))
                score, gi, frozen = min(candidates, key=lambda c: (c[0], c[1]))
                g = names[gi]
                drops[g].append(prev_score - score)
                ranks[g].append(step)
                order_r.append(g)
                prev_score = score
                remaining.remove(gi)
            finals.append(prev_score)
            orders.append(order_r)

    result = ImportanceResult(
        mode=mode,
        metric=metric,
        group_names=names,
        n_resamples=n_resamples,
        sample_size=sample_size,
        base_mean=float(np.mean(bases)),
        base_std=float(np.std(bases)),
        importance_mean={g: float(np.mean(drops[g])) for g in names},
        importance_std={g: float(np.std(drops[g])) for g in names},
    )
    if mode == "multi":
        result.final_mean = float(np.mean(finals))
        result.final_std = float(np.std(finals))
        result.elimination_orders = orders
        result.mean_rank = {g: float(np.mean(ranks[g])) for g in names}
    return result


@dataclass
class AttributionResult:
    attribution: np.ndarray
    channel_sums: np.ndarray
    channel_abs_sums: np.ndarray
    expected_value: float
    model_output: float
    completeness_residual: float

    def summary(self) -> dict:
        return {
            "channel_sums": self.channel_sums.tolist(),
            "channel_abs_sums": self.channel_abs_sums.tolist(),
            "expected_value": self.expected_value,
            "model_output": self.model_output,
            "completeness_residual": self.completeness_residual,
        }


def attribute(model, x, background, n_steps: int = 64, seed: int = 0,
              batch_size: int = 256) -> AttributionResult:
    """Expected-gradients attribution of one input against a background set.

    For every background sample the path from it to ``x`` is sampled on
    a stratified interpolation grid (n_steps points, jittered), the
    input gradient is taken at each point, and (x - background) weighs
    the average. The expected value is the mean model output over the
    background; the completeness residual |sum(attr) + expected - f(x)|
    is reported, not hidden.
    """
    if background.shape[0] == 0:
        raise ValueError("attribute: background set is empty")
    x = np.asarray(x, dtype=np.float64)
    m = background.shape[0]
    rng = Rng(derive_seed(seed, _ALPHA))
    jitter = rng.uniform((m, n_steps))
    alphas = (np.arange(n_steps) + jitter) / n_steps

    extra_axes = (slice(None),) + (None,) * x.ndim
    total = np.zeros_like(x)
    for j in range(m):
        diff = x - background[j]
        points = background[j][None] + alphas[j][extra_axes] * diff[None]
        grad_sum = np.zeros_like(x)
        for i in range(0, n_steps, batch_size):
            _, grads = model.input_gradient(points[i : i + batch_size])
            grad_sum += grads.sum(axis=0)
        total += diff * grad_sum
    attribution = total / (m * n_steps)

    bg_out = model.predict(background)
    expected = float(bg_out.reshape(m, -1).sum(axis=1).mean())
    out_x = model.predict(x[None])
    model_output = float(out_x.sum())
    residual = abs(float(attribution.sum()) + expected - model_output)

    reduce_axes = tuple(range(attribution.ndim - 1))
    return AttributionResult(
        attribution=attribution,
        channel_sums=attribution.sum(axis=reduce_axes) if attribution.ndim > 1
        else attribution.copy(),
        channel_abs_sums=np.abs(attribution).sum(axis=reduce_axes) if attribution.ndim > 1
        else np.abs(attribution),
        expected_value=expected,
        model_output=model_output,
        completeness_residual=residual,
    )


def aggregate_attributions(results: list) -> dict:
    """Channel-wise ratios of attribution sums over a result collection.

    The signed variant divides per-channel signed sums by the grand
    signed total (errors when that total is zero); the absolute variant
    uses per-pixel magnitudes and is always defined.
    """
    if not results:
        raise ValueError("aggregate_attributions: no results")
    signed = np.sum([r.channel_sums for r in results], axis=0)
    absolute = np.sum([r.channel_abs_sums for r in results], axis=0)
    total_signed = float(signed.sum())
    if total_signed == 0.0:
        raise ValueError("aggregate_attributions: signed total is zero")
    return {
        "channel_sums_total": signed.tolist(),
        "ratio_signed": (signed / total_signed).tolist(),
        "ratio_abs": (absolute / absolute.sum()).tolist(),
    }
