"""Label-selection strategies.

The budget unit everywhere is one (sample, modality) pair.  Pair-level
strategies spend it directly; image-level baselines must receive a budget
divisible by K because they always buy all K modalities of an image.  Ties
break lexicographically (lower sample id, then lower modality index) so
every strategy is deterministic given its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import MultiTaskNet, aux_loss_head_forward, encoder_features
from .numerics import SeededRng
from .uncertainty import UncertaintyMatrix

STRATEGY_NAMES = ("partal", "random", "random_partial", "rbal", "coreset", "lloss")


@dataclass(frozen=True)
class AcquisitionBatch:
    """A set of (sample_id, modality_index) pairs; cost is its size."""

    pairs: tuple[tuple[int, int], ...]
    exhausted: bool = False

    def __post_init__(self):
        if len(set(self.pairs)) != len(self.pairs):
            raise ValueError("duplicate pairs in acquisition batch")

    @property
    def cost(self) -> int:
        return len(self.pairs)


def _pair_candidates(matrix: UncertaintyMatrix, values: np.ndarray):
    rows, cols = np.nonzero(matrix.candidate_mask)
    ids = matrix.sample_ids[rows]
    return sorted(zip(-values[rows, cols], ids, cols))


def select_partal(matrix: UncertaintyMatrix, budget: int) -> AcquisitionBatch:
    """The budget's worth of most-uncertain candidate pairs (normalized).

    Returns a short batch with the exhausted flag when fewer candidates
    remain than the budget asks for.
    """
    if budget < 0:
        raise ValueError("budget must be non-negative")
    if matrix.normalized is None:
        raise ValueError("matrix has no normalized uncertainties")
    ranked = _pair_candidates(matrix, matrix.normalized)
    picked = ranked[:budget]
    return AcquisitionBatch(
        pairs=tuple((int(sid), int(k)) for _, sid, k in picked),
        exhausted=len(picked) < budget,
    )


def select_random_full(unlabelled_image_ids: np.ndarray, budget: int, K: int,
                       rng: SeededRng) -> AcquisitionBatch:
    """Uniformly chosen fully-unlabelled images, all K modalities each."""
    if budget % K != 0:
        raise ValueError(f"budget {budget} is not divisible by K={K}")
    n_images = budget // K
    ids = np.asarray(unlabelled_image_ids)
    if n_images > ids.size:
        raise ValueError("not enough fully unlabelled images for the budget")
    chosen = rng.generator().choice(ids, size=n_images, replace=False)
    pairs = tuple((int(sid), k) for sid in sorted(chosen) for k in range(K))
    return AcquisitionBatch(pairs=pairs)


def select_random_partial(candidate_pairs: list[tuple[int, int]], budget: int,
                          rng: SeededRng) -> AcquisitionBatch:
    """Uniform (sample, modality) pairs without replacement."""
    if budget > len(candidate_pairs):
        raise ValueError("budget exceeds the number of candidate pairs")
    order = sorted(candidate_pairs)
    idx = rng.generator().choice(len(order), size=budget, replace=False)
    return AcquisitionBatch(pairs=tuple(order[i] for i in sorted(idx)))


def select_rbal(matrix: UncertaintyMatrix, budget: int, K: int) -> AcquisitionBatch:
    """Rank-combination baseline over fully unlabelled images.

    Images are ranked per modality by descending raw uncertainty (rank 0 is
    the most uncertain); the images with the smallest rank sums get all K
    modalities labelled.
    """
    if budget % K != 0:
        raise ValueError(f"budget {budget} is not divisible by K={K}")
    full_rows = np.flatnonzero(matrix.candidate_mask.all(axis=1))
    n_images = budget // K
    if n_images > full_rows.size:
        raise ValueError("not enough fully unlabelled images for the budget")
    ids = matrix.sample_ids[full_rows]
    rank_sum = np.zeros(full_rows.size, dtype=np.int64)
    for k in range(K):
        order = sorted(range(full_rows.size),
                       key=lambda i: (-matrix.raw[full_rows[i], k], ids[i]))
        for rank, i in enumerate(order):
            rank_sum[i] += rank
    chosen = sorted(range(full_rows.size), key=lambda i: (rank_sum[i], ids[i]))[:n_images]
    pairs = tuple((int(ids[i]), k) for i in sorted(chosen, key=lambda i: ids[i])
                  for k in range(K))
    return AcquisitionBatch(pairs=pairs)


def kcenter_greedy(features: np.ndarray, initial_centers: set[int] | list[int],
                   k: int) -> list[int]:
    """Farthest-point selection: k new centers maximizing coverage.

    Classical 2-approximation to the k-center objective.  With no initial
    centers the first pick is the lowest-index point.  Returns the added
    indices in selection order.
    """
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    centers = sorted(int(c) for c in initial_centers)
    if k > n - len(set(centers)):
        raise ValueError("k exceeds the number of non-center points")
    if centers:
        diffs = features[:, None, :] - features[None, centers, :]
        min_dist = np.sqrt(np.sum(np.square(diffs), axis=2)).min(axis=1)
    else:
        min_dist = np.full(n, np.inf)
    is_center = np.zeros(n, dtype=bool)
    is_center[centers] = True

    added = []
    for step in range(k):
        if not is_center.any():
            pick = 0  # no centers anywhere: seed with the lowest index
        else:
            masked = np.where(is_center, -np.inf, min_dist)
            pick = int(np.argmax(masked))  # argmax takes the first (lowest) index on ties
        added.append(pick)
        is_center[pick] = True
        dist = np.sqrt(np.sum(np.square(features - features[pick]), axis=1))
        min_dist = np.minimum(min_dist, dist)
    return added


def covering_radius(features: np.ndarray, centers: list[int]) -> float:
    """Max distance from any point to its nearest center."""
    features = np.asarray(features, dtype=np.float64)
    diffs = features[:, None, :] - features[None, list(centers), :]
    return float(np.sqrt(np.sum(np.square(diffs), axis=2)).min(axis=1).max())


def select_coreset(net: MultiTaskNet, unlabelled_inputs: np.ndarray,
                   unlabelled_ids: np.ndarray, labelled_inputs: np.ndarray,
                   budget: int, K: int) -> AcquisitionBatch:
    """Core-set baseline: k-center greedy over encoder features.

    Labelled images are the initial centers; the greedy picks come from the
    unlabelled pool and are labelled for all K modalities.
    """
    if budget % K != 0:
        raise ValueError(f"budget {budget} is not divisible by K={K}")
    n_images = budget // K
    order = np.argsort(unlabelled_ids)
    ids = np.asarray(unlabelled_ids)[order]
    feats_u = encoder_features(net, unlabelled_inputs[order])
    if labelled_inputs.shape[0]:
        feats_l = encoder_features(net, labelled_inputs)
        features = np.concatenate([feats_u, feats_l], axis=0)
        initial = list(range(ids.size, ids.size + feats_l.shape[0]))
    else:
        features = feats_u
        initial = []
    picks = kcenter_greedy(features, initial, n_images)
    if any(p >= ids.size for p in picks):
        raise RuntimeError("k-center picked an already-labelled point")
    chosen = sorted(int(ids[p]) for p in picks)
    return AcquisitionBatch(pairs=tuple((sid, k) for sid in chosen for k in range(K)))


def select_learning_loss(net: MultiTaskNet, unlabelled_inputs: np.ndarray,
                         unlabelled_ids: np.ndarray, budget: int,
                         K: int) -> AcquisitionBatch:
    """Learning-loss baseline: highest predicted loss first."""
    if budget % K != 0:
        raise ValueError(f"budget {budget} is not divisible by K={K}")
    n_images = budget // K
    ids = np.asarray(unlabelled_ids)
    if n_images > ids.size:
        raise ValueError("not enough fully unlabelled images for the budget")
    predicted = aux_loss_head_forward(net, unlabelled_inputs)
    order = sorted(range(ids.size), key=lambda i: (-predicted[i], ids[i]))[:n_images]
    chosen = sorted(int(ids[i]) for i in order)
    return AcquisitionBatch(pairs=tuple((sid, k) for sid in chosen for k in range(K)))
