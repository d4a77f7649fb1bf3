"""Every selection strategy on one tiny trained model.

Run:  python demos/03_acquisition_strategies.py
"""

from collections import Counter

import numpy as np

import partal_lab as pl
from partal_lab.alcore import (
    ALConfig,
    _pool_matrix,
    stack_inputs,
    stack_targets,
    train_initial_model,
)
from partal_lab.acquisition import (
    select_coreset,
    select_learning_loss,
    select_partal,
    select_random_full,
    select_random_partial,
    select_rbal,
)

bundle = pl.generate_dataset(
    pl.GeneratorConfig(H=8, W=8, num_bumps=2, noise_std=0.03, n_train=60, n_test=10),
    seed=3)
config = ALConfig(initial_fully_labelled=10, seed=0, mc_passes=8,
                  train=pl.TrainConfig(epochs=10, seed=0),
                  net=pl.NetConfig(hidden_dim=32, aux_hidden=8))
state, net, root = train_initial_model(bundle, config)
inputs = stack_inputs(bundle.train)
targets = stack_targets(bundle.train, bundle.modalities)

matrix = _pool_matrix(net, bundle, state, targets, inputs, 8, root.split(4, 0))
params = pl.fit_normalization(matrix.raw, iteration=1,
                              candidate_mask=matrix.candidate_mask)
matrix.normalized = pl.apply_normalization(matrix.raw, params)

B, K = 12, bundle.num_modalities
unlabelled = state.fully_unlabelled_ids()
labelled = state.labelled_any_ids()

batches = {
    "partal": select_partal(matrix, B),
    "random": select_random_full(unlabelled, B, K, root.split(5, 0)),
    "random_partial": select_random_partial(state.candidate_pairs(), B, root.split(5, 1)),
    "rbal": select_rbal(matrix, B, K),
    "coreset": select_coreset(net, inputs[unlabelled], unlabelled, inputs[labelled], B, K),
    "lloss": select_learning_loss(net, inputs[unlabelled], unlabelled, B, K),
}

names = [m.name for m in bundle.modalities]
print(f"budget = {B} label units; pool = {len(bundle.train)} images, "
      f"{len(state.candidate_pairs())} candidate pairs\n")
for strategy, batch in batches.items():
    per_mod = Counter(names[k] for _, k in batch.pairs)
    images = sorted({sid for sid, _ in batch.pairs})
    print(f"{strategy:15s} cost={batch.cost:3d}  images={images}")
    print(f"{'':15s} per-modality: {dict(per_mod)}")

print("\npair-level strategies may split an image across modalities;")
print("image-level baselines always buy all modalities of an image.")
