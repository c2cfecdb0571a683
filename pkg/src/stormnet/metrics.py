"""Forecast verification metrics.

Categorical scores come from the standard 2x2 contingency table with an
inclusive decision rule (predict positive when prob >= threshold), so
threshold 0 predicts everything positive. Degenerate 0/0 ratios are
defined as 0 for POD/SR/CSI and 1 for frequency bias. The ROC uses one
point per distinct probability (ties grouped) plus the (0,0) endpoint,
and the trapezoidal AUC then equals the pair-concordance probability
with ties counted half.
"""

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ShapeError

SWEEP_CSV_HEADER = "threshold,pod,sr,csi,freq_bias"
ROC_CSV_HEADER = "fpr,pod"


@dataclass
class Contingency:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _check_binary(labels):
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be binary 0/1")


def contingency(probs, labels, threshold: float) -> Contingency:
    probs = np.asarray(probs, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if probs.shape != labels.shape:
        raise ShapeError(f"contingency: shapes {probs.shape} and {labels.shape} differ")
    _check_binary(labels)
    pred = probs >= threshold
    pos = labels == 1
    tp = int(np.count_nonzero(pred & pos))
    fp = int(np.count_nonzero(pred & ~pos))
    fn = int(np.count_nonzero(~pred & pos))
    tn = int(np.count_nonzero(~pred & ~pos))
    return Contingency(tp, fp, fn, tn)


def _ratio(num: float, den: float, empty: float) -> float:
    return empty if den == 0 else num / den


def scores(c: Contingency) -> dict:
    """POD, success ratio, CSI, and frequency bias for one table."""
    return {
        "pod": _ratio(c.tp, c.tp + c.fn, 0.0),
        "sr": _ratio(c.tp, c.tp + c.fp, 0.0),
        "csi": _ratio(c.tp, c.tp + c.fp + c.fn, 0.0),
        "freq_bias": _ratio(c.tp + c.fp, c.tp + c.fn, 1.0),
    }


def _sweep_thresholds(step: float):
    if not 0.0 < step <= 1.0:
        raise ValueError(f"sweep step must be in (0, 1], got {step}")
    count = int(np.floor(1.0 / step + 1e-9))
    ts = [round(i * step, 12) for i in range(count + 1)]
    if ts[-1] < 1.0:
        ts.append(1.0)
    return ts


def threshold_sweep(probs, labels, step: float = 0.05) -> dict:
    """Score the 0..1 threshold grid (21 rows at the default step).

    Returns {"rows": [...], "best_csi_threshold": t} where the best
    threshold is the lowest one attaining the maximum CSI.
    """
    rows = []
    best_t, best_csi = 0.0, -1.0
    for t in _sweep_thresholds(step):
        s = scores(contingency(probs, labels, t))
        s["threshold"] = t
        rows.append(s)
        if s["csi"] > best_csi:
            best_csi, best_t = s["csi"], t
    return {"rows": rows, "best_csi_threshold": best_t}


def roc_auc(probs, labels):
    """ROC points [(fpr, pod)] over distinct-probability thresholds and
    the trapezoidal AUC. Both classes must be present."""
    probs = np.asarray(probs, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if probs.shape != labels.shape:
        raise ShapeError(f"roc_auc: shapes {probs.shape} and {labels.shape} differ")
    _check_binary(labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc: both classes must be present")
    order = np.argsort(-probs, kind="stable")
    sorted_labels = labels[order]
    sorted_probs = probs[order]
    # group ties: cumulative counts at the end of each distinct-prob run
    boundary = np.nonzero(np.diff(sorted_probs))[0]
    idx = np.concatenate([boundary, [probs.size - 1]])
    cum_tp = np.cumsum(sorted_labels)[idx]
    cum_fp = (idx + 1) - cum_tp
    pod = cum_tp / n_pos
    fpr = cum_fp / n_neg
    points = [(0.0, 0.0)] + list(zip(fpr.tolist(), pod.tolist()))
    auc = 0.0
    for (x0, y0), (x1, y1) in zip(points[:-1], points[1:]):
        auc += (x1 - x0) * (y0 + y1) * 0.5
    return points, float(auc)


def regression_metrics(y_hat, y) -> dict:
    """MAE, RMSE, bias (mean error), and R^2."""
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if y_hat.shape != y.shape:
        raise ShapeError(f"regression_metrics: shapes {y_hat.shape} and {y.shape} differ")
    if y.size < 2:
        raise ValueError("regression_metrics: need at least 2 samples for r2")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("regression_metrics: zero variance in targets, r2 undefined")
    err = y_hat - y
    return {
        "mae": float(np.mean(np.abs(err))),
        "rmse": float(np.sqrt(np.mean(err * err))),
        "bias": float(np.mean(err)),
        "r2": 1.0 - float(np.sum(err * err)) / ss_tot,
    }


@dataclass
class EvalReport:
    task: str
    mode: str
    thresholds: list = None
    best_csi_threshold: float = None
    roc: list = None
    auc: float = None
    regression: dict = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        d["roc"] = [tuple(p) for p in d["roc"]] if d.get("roc") else d.get("roc")
        return cls(**d)

    def sweep_csv(self) -> str:
        lines = [SWEEP_CSV_HEADER]
        for r in self.thresholds or []:
            lines.append(
                f"{r['threshold']!r},{r['pod']!r},{r['sr']!r},{r['csi']!r},{r['freq_bias']!r}"
            )
        return "\n".join(lines) + "\n"

    def roc_csv(self) -> str:
        lines = [ROC_CSV_HEADER]
        for fpr, pod in self.roc or []:
            lines.append(f"{fpr!r},{pod!r}")
        return "\n".join(lines) + "\n"


def classification_report(probs, labels, task: str, mode: str,
                          sweep_step: float = 0.05) -> EvalReport:
    sweep = threshold_sweep(probs, labels, sweep_step)
    roc, auc = roc_auc(probs, labels)
    return EvalReport(
        task=task,
        mode=mode,
        thresholds=sweep["rows"],
        best_csi_threshold=sweep["best_csi_threshold"],
        roc=roc,
        auc=auc,
        extra={"n": int(np.asarray(labels).size), "positives": int(np.asarray(labels).sum())},
    )


def regression_report(y_hat, y, task: str, mode: str) -> EvalReport:
    return EvalReport(
        task=task,
        mode=mode,
        regression=regression_metrics(y_hat, y),
        extra={"n": int(np.asarray(y).size)},
    )


def evaluate_scalar(model, inputs, targets, task: str, sweep_step: float = 0.05) -> EvalReport:
    """Image-level evaluation of a scalar-output model."""
    if not model.spec.output.endswith("-scalar"):
        raise ValueError("evaluate_scalar requires a scalar-output model")
    preds = model.predict(inputs)[:, 0]
    if task == "classification":
        return classification_report(preds, targets, task, "image", sweep_step)
    if task == "regression":
        return regression_report(preds, targets, task, "image")
    raise ValueError(f"unknown task {task!r}")


def evaluate_unet(model, split, mode: str, task: str, sweep_step: float = 0.05) -> EvalReport:
    """Map-output evaluation.

    pixel mode pools every pixel across the dataset into one scored
    population; image_sum reduces each predicted map to one value per
    image (sum of predicted flashes for regression, max pixel
    probability for classification) and scores per image.
    """
    if not model.spec.output.endswith("-map"):
        raise ValueError("evaluate_unet requires a map-output model")
    if mode not in ("pixel", "image_sum"):
        raise ValueError(f"unknown unet evaluation mode {mode!r}")
    preds = model.predict(split.images)[..., 0]
    if task == "classification":
        if mode == "pixel":
            return classification_report(
                preds.ravel(), split.pixel_labels().ravel(), task, mode, sweep_step
            )
        return classification_report(
            preds.max(axis=(1, 2)), split.labels_any(), task, mode, sweep_step
        )
    if task == "regression":
        if mode == "pixel":
            return regression_report(preds.ravel(), split.flashes.ravel(), task, mode)
        return regression_report(preds.sum(axis=(1, 2)), split.flash_counts(), task, mode)
    raise ValueError(f"unknown task {task!r}")
