"""MC-Dropout uncertainty: entropies, image scores, frozen normalization.

Categorical tasks get the Shannon entropy of the mean softmax over D
stochastic passes; continuous tasks get the Gaussian differential entropy
of the per-pixel predictive variance.  Image scores are pixel means.  The
two entropy families live on different scales, so scores are min-max
normalized per modality with parameters fitted once, at the first
acquisition step, and frozen afterwards; later scores may leave [0, 1]
and that is intentional (comparability across iterations beats a tidy
interval).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .data import CATEGORICAL, ModalitySpec
from .model import BatchNoise, LabelInjection, MultiTaskNet, _forward
from .numerics import SeededRng, dropout_mask, softmax

VARIANCE_FLOOR = 1e-8


class NormalizationFrozenError(RuntimeError):
    """Attempt to refit normalization parameters that are already frozen."""


class DegenerateUncertaintyError(ValueError):
    """A modality's uncertainties have (numerically) zero spread."""


@dataclass
class McSummary:
    """Moments of D stochastic forward passes for one sample.

    Categorical modalities store the mean class-probability map; continuous
    ones the per-pixel mean and unbiased per-channel variance.
    """

    num_passes: int
    mean_probs: dict[str, np.ndarray]  # name -> [num_classes, H, W]
    mean: dict[str, np.ndarray]        # name -> [dim, H, W]
    variance: dict[str, np.ndarray]    # name -> [dim, H, W], floored


def _mc_masks(rng: SeededRng, num_passes: int, hidden: int,
              rate: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-pass dropout masks for one sample, [D, hidden] per layer.

    Drawn from the sample's own stream so results do not depend on how the
    pool is batched or scheduled.
    """
    return (dropout_mask(rng.split(0), (num_passes, hidden), rate),
            dropout_mask(rng.split(1), (num_passes, hidden), rate))


def mc_predict(net: MultiTaskNet, x: np.ndarray, injection: LabelInjection | None,
               num_passes: int, rng: SeededRng) -> McSummary:
    """MC-Dropout summary for a single sample [C_in, H, W].

    Injection carries the modalities already labelled for this sample; their
    ground truth conditions the distillation stage on every pass.
    """
    if num_passes < 2:
        raise ValueError("need at least 2 passes for a variance estimate")
    flat = x.reshape(1, -1).astype(np.float64)
    d1, d2 = _mc_masks(rng, num_passes, net.config.hidden_dim, net.config.dropout_rate)
    sums_p: dict[str, np.ndarray] = {}
    acc: dict[str, list[np.ndarray]] = {}
    for d in range(num_passes):
        noise = BatchNoise(drop1=d1[d: d + 1], drop2=d2[d: d + 1])
        fwd = _forward(net, flat, injection, noise)
        for m in net.modalities:
            out = fwd.stage2[m.name].reshape(m.channels, net.H, net.W)
            if m.kind == CATEGORICAL:
                probs = softmax(out, axis=0)
                sums_p[m.name] = sums_p.get(m.name, 0.0) + probs
            else:
                acc.setdefault(m.name, []).append(out)
    mean_probs = {k: v / num_passes for k, v in sums_p.items()}
    mean = {k: np.mean(v, axis=0) for k, v in acc.items()}
    variance = {k: np.maximum(np.var(v, axis=0, ddof=1), VARIANCE_FLOOR)
                for k, v in acc.items()}
    return McSummary(num_passes, mean_probs, mean, variance)


def pool_uncertainties(net: MultiTaskNet, inputs: np.ndarray,
                       targets: dict[str, np.ndarray], label_mask: np.ndarray,
                       sample_ids: np.ndarray, num_passes: int,
                       rng: SeededRng) -> UncertaintyMatrix:
    """Image-wise raw uncertainties for a pool of samples, [N, K].

    Equivalent to running :func:`mc_predict` per sample (each sample's
    dropout masks come from its own ``rng.split(sample_id)`` stream, and a
    sample's labelled modalities are injected), but batches each stochastic
    pass over the whole pool.
    """
    if num_passes < 2:
        raise ValueError("need at least 2 passes for a variance estimate")
    label_mask = np.asarray(label_mask, dtype=bool)
    N = inputs.shape[0]
    flat = inputs.reshape(N, -1).astype(np.float64)
    h = net.config.hidden_dim
    d1 = np.empty((num_passes, N, h))
    d2 = np.empty((num_passes, N, h))
    for i in range(N):
        m1, m2 = _mc_masks(rng.split(int(sample_ids[i])), num_passes, h,
                           net.config.dropout_rate)
        d1[:, i, :] = m1
        d2[:, i, :] = m2

    injection = LabelInjection.empty()
    for k, m in enumerate(net.modalities):
        rows = label_mask[:, k]
        if rows.any():
            injection.values[m.name] = targets[m.name]
            injection.rows[m.name] = rows

    sum_probs: dict[str, np.ndarray] = {}
    sums: dict[str, np.ndarray] = {}
    sq_sums: dict[str, np.ndarray] = {}
    for d in range(num_passes):
        noise = BatchNoise(drop1=d1[d], drop2=d2[d])
        fwd = _forward(net, flat, injection, noise)
        for m in net.modalities:
            out = fwd.stage2[m.name].reshape(N, m.channels, net.H, net.W)
            if m.kind == CATEGORICAL:
                probs = softmax(out, axis=1)
                sum_probs[m.name] = sum_probs.get(m.name, 0.0) + probs
            else:
                sums[m.name] = sums.get(m.name, 0.0) + out
                sq_sums[m.name] = sq_sums.get(m.name, 0.0) + np.square(out)

    raw = np.empty((N, len(net.modalities)))
    for k, m in enumerate(net.modalities):
        if m.kind == CATEGORICAL:
            mean_probs = sum_probs[m.name] / num_passes
            for i in range(N):
                raw[i, k] = image_uncertainty(shannon_entropy_map(mean_probs[i]))
        else:
            mean = sums[m.name] / num_passes
            var = (sq_sums[m.name] - num_passes * np.square(mean)) / (num_passes - 1)
            var = np.maximum(var, VARIANCE_FLOOR)
            for i in range(N):
                raw[i, k] = image_uncertainty(gaussian_entropy_map(var[i]))
    return UncertaintyMatrix(sample_ids=np.asarray(sample_ids, dtype=np.int64),
                             raw=raw, candidate_mask=~label_mask)


def shannon_entropy_map(mean_probs: np.ndarray) -> np.ndarray:
    """Per-pixel Shannon entropy (nats) of [num_classes, H, W] probabilities."""
    p = np.asarray(mean_probs, dtype=np.float64)
    sums = p.sum(axis=0)
    if np.max(np.abs(sums - 1.0)) > 1e-6 or p.min() < -1e-12:
        raise ValueError("probabilities do not sum to 1 per pixel")
    plogp = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return -plogp.sum(axis=0)


def gaussian_entropy_map(variance: np.ndarray) -> np.ndarray:
    """Per-pixel differential entropy (nats) under a diagonal Gaussian.

    ``variance`` is [dim, H, W]; values below the floor are clamped rather
    than rejected, bounding the entropy from below without disturbing the
    ranking of genuinely uncertain pixels.
    """
    var = np.maximum(np.asarray(variance, dtype=np.float64), VARIANCE_FLOOR)
    dim = var.shape[0]
    return 0.5 * dim * (np.log(2.0 * np.pi) + 1.0) + 0.5 * np.log(var).sum(axis=0)


def image_uncertainty(entropy_map: np.ndarray) -> float:
    """Image-wise score: the mean of the per-pixel entropies."""
    return float(np.mean(entropy_map))


def summary_image_uncertainties(summary: McSummary,
                                modalities: list[ModalitySpec]) -> np.ndarray:
    """Image-wise uncertainty per modality, in modality order."""
    out = np.empty(len(modalities))
    for k, m in enumerate(modalities):
        if m.kind == CATEGORICAL:
            emap = shannon_entropy_map(summary.mean_probs[m.name])
        else:
            emap = gaussian_entropy_map(summary.variance[m.name])
        out[k] = image_uncertainty(emap)
    return out


@dataclass
class UncertaintyMatrix:
    """Image-wise entropies for the current pool.

    ``sample_ids[i]`` names the dataset record behind row i.
    ``candidate_mask[i, k]`` is True iff pair (i, k) is still unlabelled.
    ``normalized`` exists only once normalization parameters do.
    """

    sample_ids: np.ndarray  # [N] int
    raw: np.ndarray         # [N, K]
    candidate_mask: np.ndarray  # [N, K] bool
    normalized: np.ndarray | None = None


@dataclass(frozen=True)
class NormalizationParams:
    """Per-modality min/max, frozen at the iteration that fitted them."""

    u_min: np.ndarray
    u_max: np.ndarray
    frozen_at_iteration: int


def fit_normalization(raw: np.ndarray, *, iteration: int,
                      candidate_mask: np.ndarray | None = None,
                      existing: NormalizationParams | None = None) -> NormalizationParams:
    """Fit per-modality min/max over the current pool and freeze them.

    Passing previously fitted params is an error: frozen means frozen.
    Min/max are taken over candidate (still unlabelled) pairs when a mask
    is given, over all rows otherwise.
    """
    if existing is not None:
        raise NormalizationFrozenError(
            f"normalization params were frozen at iteration {existing.frozen_at_iteration}")
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[0] < 2:
        raise ValueError("need at least 2 pool rows to fit normalization")
    K = raw.shape[1]
    u_min = np.empty(K)
    u_max = np.empty(K)
    for k in range(K):
        col = raw[:, k] if candidate_mask is None else raw[candidate_mask[:, k], k]
        if col.size < 2:
            raise ValueError(f"modality {k} has fewer than 2 candidate uncertainties")
        u_min[k], u_max[k] = col.min(), col.max()
        if u_max[k] - u_min[k] <= 1e-12:
            raise DegenerateUncertaintyError(
                f"degenerate modality uncertainty: spread {u_max[k] - u_min[k]:.3e} "
                f"for modality {k}")
    return NormalizationParams(u_min, u_max, iteration)


def apply_normalization(raw: np.ndarray, params: NormalizationParams) -> np.ndarray:
    """(u - u_min) / (u_max - u_min); deliberately unclamped."""
    return (np.asarray(raw, dtype=np.float64) - params.u_min) / (params.u_max - params.u_min)


def dump_uncertainty_csv(matrix: UncertaintyMatrix, modalities: list[ModalitySpec],
                         path: str | Path) -> None:
    """Debug dump: one row per (sample, modality)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "modality", "raw", "normalized"])
        for i, sid in enumerate(matrix.sample_ids):
            for k, m in enumerate(modalities):
                norm = "" if matrix.normalized is None else repr(matrix.normalized[i, k])
                writer.writerow([int(sid), m.name, repr(matrix.raw[i, k]), norm])


def discretized_shannon(pdf: Callable[[np.ndarray], np.ndarray],
                        lo: float, hi: float, eps: float) -> float:
    """Shannon entropy of a continuous density discretized into eps-bins.

    Each bin's mass is its integral of the pdf (Simpson's rule per bin, so
    quadrature error is negligible next to the discretization itself).  As
    eps shrinks, H_disc + ln(eps) converges to the differential entropy,
    which is exactly the bridge that justifies min-max normalizing the two
    entropy families together.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    n_bins = int(np.round((hi - lo) / eps))
    if n_bins < 1:
        raise ValueError("range shorter than one bin")
    edges = lo + np.arange(n_bins + 1) * eps
    mids = lo + (np.arange(n_bins) + 0.5) * eps
    p_edges = np.asarray(pdf(edges), dtype=np.float64)
    p_mids = np.asarray(pdf(mids), dtype=np.float64)
    masses = (eps / 6.0) * (p_edges[:-1] + 4.0 * p_mids + p_edges[1:])
    total = masses.sum()
    if not 0.999 <= total <= 1.001:
        raise ValueError(f"pdf mass over range is {total:.6f}, not ~1")
    pos = masses[masses > 0.0]
    return float(-(pos * np.log(pos)).sum())
