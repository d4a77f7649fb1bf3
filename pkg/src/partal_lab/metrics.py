"""Per-task evaluation metrics and the aggregate multi-task score."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import ModalitySpec


@dataclass(frozen=True)
class MetricValue:
    name: str
    metric: str
    value: float
    higher_is_better: bool


@dataclass
class MetricsReport:
    """Per-modality metric values, optionally with the aggregate score."""

    values: list[MetricValue]
    delta_mtl: float | None = None

    def by_name(self) -> dict[str, MetricValue]:
        return {v.name: v for v in self.values}

    def value(self, name: str) -> float:
        return self.by_name()[name].value


def rmse(pred: np.ndarray, target: np.ndarray) -> float:
    """Root-mean-square error over all elements."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.sqrt(np.mean(np.square(pred - target))))


def mean_angle_error(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean angle between unit-vector fields, in degrees.

    Vector axis is the leading one of the trailing [3, H, W] block (works on
    batches [..., 3, H, W]).  Predictions are normalized here because raw
    network outputs are not unit length; zero-length predictions fall back
    to (0, 0, 1) and are reported through a warning.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    axis = pred.ndim - 3
    if pred.shape[axis] != 3:
        raise ValueError("expected 3-vector fields")
    norms = np.linalg.norm(pred, axis=axis, keepdims=True)
    zero = norms < 1e-12
    n_zero = int(np.count_nonzero(zero))
    p = pred / np.where(zero, 1.0, norms)
    if n_zero:
        warnings.warn(f"{n_zero} zero-length prediction vectors treated as (0, 0, 1)")
        p = np.where(np.broadcast_to(zero, p.shape), 0.0, p)
        z_comp = [slice(None)] * p.ndim
        z_comp[axis] = 2
        flat = [slice(None)] * p.ndim
        flat[axis] = 0
        p[tuple(z_comp)] = np.where(zero[tuple(flat)], 1.0, p[tuple(z_comp)])
    dots = np.clip(np.sum(p * target, axis=axis), -1.0, 1.0)
    return float(np.degrees(np.mean(np.arccos(dots))))


def miou(pred_classes: np.ndarray, target_classes: np.ndarray, num_classes: int) -> float:
    """Mean IoU over classes present in prediction or target.

    Classes absent from both are skipped so a per-image score stays
    well-defined when a class does not occur.
    """
    pred = np.asarray(pred_classes).reshape(-1)
    target = np.asarray(target_classes).reshape(-1)
    if pred.shape != target.shape:
        raise ValueError("shape mismatch between prediction and target")
    for arr, what in ((pred, "prediction"), (target, "target")):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise ValueError(f"{what} classes outside [0, {num_classes})")
    ious = []
    for c in range(num_classes):
        p = pred == c
        t = target == c
        union = np.count_nonzero(p | t)
        if union == 0:
            continue
        ious.append(np.count_nonzero(p & t) / union)
    return float(np.mean(ious))


def delta_mtl(report: MetricsReport, reference: MetricsReport) -> float:
    """Signed mean relative difference versus a reference; lower is better.

    For each modality the relative change (M - M_ref)/M_ref is signed so
    that improvement is negative regardless of metric direction, then
    averaged over modalities.
    """
    ref = reference.by_name()
    got = report.by_name()
    if set(ref) != set(got):
        raise ValueError("reports cover different modality sets")
    total = 0.0
    for name, r in ref.items():
        if r.value == 0:
            raise ValueError(f"reference value for {name} is zero")
        sign = -1.0 if r.higher_is_better else 1.0
        total += sign * (got[name].value - r.value) / r.value
    return total / len(ref)


def metric_value(spec: ModalitySpec, pred: np.ndarray, target: np.ndarray) -> float:
    """Dispatch to the metric named by a modality spec."""
    if spec.metric == "rmse":
        return rmse(pred, target)
    if spec.metric == "mean_angle_error":
        return mean_angle_error(pred, target)
    if spec.metric == "miou":
        return miou(pred, target, spec.num_classes)
    raise ValueError(f"unknown metric {spec.metric!r}")
