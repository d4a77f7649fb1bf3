"""Two-stage multi-task network with masked losses and label injection.

Stage 1 maps shared encoder features to one initial prediction per modality.
Stage 2 (the distillation stage) refines each modality from the encoder
features concatenated with every modality's stage-1 prediction, and any
prediction in that concatenation can be replaced by ground truth when a
label happens to be known.  That replacement is the injection mechanism:
it is used at inference to exploit partial labels, and during training as
stochastic teacher forcing.

Backpropagation is written out by hand (the network is three matmuls deep),
so the gradient path through the distillation concatenation, including the
softmax of categorical stage-1 predictions, is explicit and testable
against finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import CATEGORICAL, ModalitySpec, SampleRecord
from .numerics import (
    AdamState,
    NonFiniteError,
    SeededRng,
    adam_step,
    assert_finite,
    dropout_mask,
    log_softmax,
    poly_lr,
    relu,
    sigmoid,
    softmax,
    softmax_vjp,
    softplus,
)

CHECKPOINT_VERSION = 1


class InjectionError(ValueError):
    """Injection refers to a modality the network does not have."""


@dataclass(frozen=True)
class NetConfig:
    hidden_dim: int = 128
    dropout_rate: float = 0.1
    aux_head: bool = True
    aux_hidden: int = 32
    # Stage-1 predictions feed the distillation stage; by default gradients
    # flow through that path, the flag cuts it.
    detach_stage1: bool = False


@dataclass
class LabelInjection:
    """Ground truth to splice into the distillation input.

    ``values[name]`` holds batch-aligned targets and ``rows[name]`` marks
    which batch rows actually receive them; rows default to all.
    """

    values: dict[str, np.ndarray] = field(default_factory=dict)
    rows: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def empty(cls) -> "LabelInjection":
        return cls()

    def row_mask(self, name: str, batch: int) -> np.ndarray:
        if name in self.rows:
            return np.asarray(self.rows[name], dtype=bool)
        return np.ones(batch, dtype=bool)


class MultiTaskNet:
    """Shared encoder, per-task initial heads, per-task distillation heads."""

    def __init__(self, modalities: list[ModalitySpec], H: int, W: int, C_in: int,
                 config: NetConfig, rng: SeededRng):
        self.modalities = list(modalities)
        self.H, self.W, self.C_in = H, W, C_in
        self.config = config
        self.pixels = H * W
        self.input_dim = C_in * self.pixels
        self.out_sizes = {m.name: m.channels * self.pixels for m in modalities}
        self.distill_in_dim = config.hidden_dim + sum(self.out_sizes.values())
        # Slice of the distillation input holding each modality's stage-1 block.
        self.contrib_slices: dict[str, slice] = {}
        offset = config.hidden_dim
        for m in modalities:
            self.contrib_slices[m.name] = slice(offset, offset + self.out_sizes[m.name])
            offset += self.out_sizes[m.name]
        self.params = self._init_params(rng)

    def spec(self, name: str) -> ModalitySpec:
        for m in self.modalities:
            if m.name == name:
                return m
        raise InjectionError(f"unknown modality {name!r}")

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        h = self.config.hidden_dim
        shapes = {
            "enc1_w": (self.input_dim, h), "enc1_b": (h,),
            "enc2_w": (h, h), "enc2_b": (h,),
        }
        for m in self.modalities:
            n = self.out_sizes[m.name]
            shapes[f"head_{m.name}_w"] = (h, n)
            shapes[f"head_{m.name}_b"] = (n,)
            shapes[f"distill_{m.name}_w"] = (self.distill_in_dim, n)
            shapes[f"distill_{m.name}_b"] = (n,)
        if self.config.aux_head:
            shapes["aux1_w"] = (h, self.config.aux_hidden)
            shapes["aux1_b"] = (self.config.aux_hidden,)
            shapes["aux2_w"] = (self.config.aux_hidden, 1)
            shapes["aux2_b"] = (1,)
        return shapes

    def _init_params(self, rng: SeededRng) -> dict[str, np.ndarray]:
        gen = rng.generator()
        params = {}
        for name, shape in self.param_shapes().items():
            if name.endswith("_b"):
                # Small nonzero bias keeps pre-activations off the exact ReLU
                # kink (zero bias + a fully dropped row pins them at 0).
                params[name] = 0.01 * gen.standard_normal(shape)
            else:
                fan_in = shape[0]
                scale = np.sqrt(2.0 / fan_in) if name.startswith(("enc", "aux1")) \
                    else np.sqrt(1.0 / fan_in)
                params[name] = gen.standard_normal(shape) * scale
        return params

    def modality_params(self, name: str) -> dict[str, np.ndarray]:
        """The parameters owned by one modality (initial + distill head)."""
        self.spec(name)
        return {k: v for k, v in self.params.items()
                if k.startswith((f"head_{name}_", f"distill_{name}_"))}


def encode_target(spec: ModalitySpec, pixels: int, targets: np.ndarray) -> np.ndarray:
    """Flatten targets into the distillation-input encoding, [n, channels*P].

    Categorical targets become exact one-hot vectors (value 1 at the true
    class), matching the codomain of the softmaxed stage-1 predictions.
    """
    targets = np.asarray(targets)
    if spec.kind == CATEGORICAL:
        classes = targets.reshape(targets.shape[0], pixels).astype(np.int64)
        if classes.min() < 0 or classes.max() >= spec.num_classes:
            raise ValueError(f"class values outside [0, {spec.num_classes}) for {spec.name}")
        onehot = np.zeros((classes.shape[0], spec.num_classes, pixels))
        np.put_along_axis(onehot, classes[:, None, :], 1.0, axis=1)
        return onehot.reshape(classes.shape[0], -1)
    return targets.reshape(targets.shape[0], -1).astype(np.float64)


@dataclass
class BatchNoise:
    """Explicit randomness of one forward pass (so passes are replayable)."""

    drop1: np.ndarray | None = None
    drop2: np.ndarray | None = None

    @classmethod
    def sample(cls, rng: SeededRng, batch: int, hidden: int, rate: float) -> "BatchNoise":
        return cls(
            drop1=dropout_mask(rng.split(0), (batch, hidden), rate),
            drop2=dropout_mask(rng.split(1), (batch, hidden), rate),
        )


@dataclass
class ForwardPass:
    """All intermediates of one forward pass, kept for the backward pass."""

    x: np.ndarray
    z1: np.ndarray
    d1: np.ndarray
    z2: np.ndarray
    features: np.ndarray
    stage1: dict[str, np.ndarray]        # flat [B, C*P]
    stage1_probs: dict[str, np.ndarray]  # categorical softmax, [B, C, P]
    injected_rows: dict[str, np.ndarray]
    distill_in: np.ndarray
    stage2: dict[str, np.ndarray]        # flat [B, C*P]
    noise: BatchNoise
    aux_z: np.ndarray | None = None
    aux_a: np.ndarray | None = None
    aux_za: np.ndarray | None = None
    aux_pred: np.ndarray | None = None


def _forward(net: MultiTaskNet, x: np.ndarray, injection: LabelInjection | None,
             noise: BatchNoise) -> ForwardPass:
    injection = injection or LabelInjection.empty()
    for name in list(injection.values) + list(injection.rows):
        net.spec(name)

    B = x.shape[0]
    p = net.params
    z1 = x @ p["enc1_w"] + p["enc1_b"]
    d1 = relu(z1)
    if noise.drop1 is not None:
        d1 = d1 * noise.drop1
    z2 = d1 @ p["enc2_w"] + p["enc2_b"]
    f = relu(z2)
    if noise.drop2 is not None:
        f = f * noise.drop2

    stage1, probs, injected_rows = {}, {}, {}
    blocks = [f]
    for m in net.modalities:
        s1 = f @ p[f"head_{m.name}_w"] + p[f"head_{m.name}_b"]
        stage1[m.name] = s1
        if m.kind == CATEGORICAL:
            pr = softmax(s1.reshape(B, m.num_classes, net.pixels), axis=1)
            probs[m.name] = pr
            contrib = pr.reshape(B, -1)
        else:
            contrib = s1
        rows = np.zeros(B, dtype=bool)
        if m.name in injection.values:
            rows = injection.row_mask(m.name, B)
            if rows.any():
                contrib = contrib.copy()
                picked = np.asarray(injection.values[m.name])[rows]
                contrib[rows] = encode_target(m, net.pixels, picked)
        injected_rows[m.name] = rows
        blocks.append(contrib)

    g = np.concatenate(blocks, axis=1)
    stage2 = {m.name: g @ p[f"distill_{m.name}_w"] + p[f"distill_{m.name}_b"]
              for m in net.modalities}

    fwd = ForwardPass(x=x, z1=z1, d1=d1, z2=z2, features=f, stage1=stage1,
                      stage1_probs=probs, injected_rows=injected_rows,
                      distill_in=g, stage2=stage2, noise=noise)
    if net.config.aux_head:
        fwd.aux_za = f @ p["aux1_w"] + p["aux1_b"]
        fwd.aux_a = relu(fwd.aux_za)
        fwd.aux_z = (fwd.aux_a @ p["aux2_w"] + p["aux2_b"])[:, 0]
        fwd.aux_pred = softplus(fwd.aux_z)
    return fwd


def forward(net: MultiTaskNet, x: np.ndarray, injection: LabelInjection | None = None,
            dropout_active: bool = False, rng: SeededRng | None = None):
    """Public forward pass returning per-modality (stage1, stage2) maps.

    ``x`` is [B, C_in, H, W] (or a single [C_in, H, W] sample).  With
    ``dropout_active`` the caller must supply the rng stream that draws the
    masks, making stochastic passes replayable.
    """
    single = x.ndim == 3
    if single:
        x = x[None]
    flat = x.reshape(x.shape[0], -1).astype(np.float64)
    if dropout_active:
        if rng is None:
            raise ValueError("dropout_active requires an rng stream")
        noise = BatchNoise.sample(rng, flat.shape[0], net.config.hidden_dim,
                                  net.config.dropout_rate)
    else:
        noise = BatchNoise()
    fwd = _forward(net, flat, injection, noise)
    B = flat.shape[0]

    def shaped(d):
        out = {}
        for m in net.modalities:
            arr = d[m.name].reshape(B, m.channels, net.H, net.W)
            out[m.name] = arr[0] if single else arr
        return out

    feats = fwd.features[0] if single else fwd.features
    return shaped(fwd.stage1), shaped(fwd.stage2), feats


def _continuous_rows_loss(pred_rows: np.ndarray, target_rows: np.ndarray) -> np.ndarray:
    """Per-row mean squared error over all channels and pixels."""
    return np.mean(np.square(pred_rows - target_rows.reshape(pred_rows.shape)), axis=1)


def _categorical_rows_ce(logits_rows: np.ndarray, class_rows: np.ndarray,
                         num_classes: int, pixels: int) -> np.ndarray:
    """Per-row cross entropy, averaged over pixels. Validates class range."""
    n = logits_rows.shape[0]
    classes = class_rows.reshape(n, pixels).astype(np.int64)
    if n and (classes.min() < 0 or classes.max() >= num_classes):
        raise ValueError("target classes outside valid range reached the loss")
    logp = log_softmax(logits_rows.reshape(n, num_classes, pixels), axis=1)
    picked = np.take_along_axis(logp, classes[:, None, :], axis=1)[:, 0, :]
    return -np.mean(picked, axis=1)


def per_sample_losses(net: MultiTaskNet, fwd: ForwardPass,
                      targets: dict[str, np.ndarray],
                      mask_rows: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Per-sample (stage1 + stage2) loss per modality; unlabelled rows NaN.

    Only labelled rows' targets are ever read, so poisoned (sentinel)
    targets on unlabelled pairs cannot reach any loss term.
    """
    B = fwd.x.shape[0]
    out = {}
    for m in net.modalities:
        rows = mask_rows[m.name]
        vals = np.full(B, np.nan)
        if rows.any():
            t = np.asarray(targets[m.name])[rows]
            if m.kind == CATEGORICAL:
                vals[rows] = (
                    _categorical_rows_ce(fwd.stage1[m.name][rows], t, m.num_classes, net.pixels)
                    + _categorical_rows_ce(fwd.stage2[m.name][rows], t, m.num_classes, net.pixels)
                )
            else:
                vals[rows] = (
                    _continuous_rows_loss(fwd.stage1[m.name][rows], t)
                    + _continuous_rows_loss(fwd.stage2[m.name][rows], t)
                )
        out[m.name] = vals
    return out


def masked_loss(stage1: dict[str, np.ndarray], stage2: dict[str, np.ndarray],
                targets: dict[str, np.ndarray], label_mask: np.ndarray,
                modalities: list[ModalitySpec]) -> tuple[float, dict[str, float]]:
    """Weighted masked loss over a batch: total and per-modality values.

    ``label_mask`` is [B, K] in modality order.  A modality's loss is the
    mean over its labelled samples of (stage1 + stage2) losses; modalities
    with no labelled sample contribute exactly 0.
    """
    label_mask = np.asarray(label_mask, dtype=bool)
    if not label_mask.any():
        raise ValueError("nothing to train on: label mask is all zero")
    total = 0.0
    per_mod = {}
    for k, m in enumerate(modalities):
        rows = label_mask[:, k]
        if not rows.any():
            per_mod[m.name] = 0.0
            continue
        t = np.asarray(targets[m.name])[rows]
        B = rows.shape[0]
        s1 = np.asarray(stage1[m.name]).reshape(B, -1)[rows]
        s2 = np.asarray(stage2[m.name]).reshape(B, -1)[rows]
        if m.kind == CATEGORICAL:
            pixels = s1.shape[1] // m.num_classes
            vals = (_categorical_rows_ce(s1, t, m.num_classes, pixels)
                    + _categorical_rows_ce(s2, t, m.num_classes, pixels))
        else:
            vals = _continuous_rows_loss(s1, t) + _continuous_rows_loss(s2, t)
        loss_k = float(np.mean(vals))
        per_mod[m.name] = loss_k
        total += m.loss_weight * loss_k
    return total, per_mod


def _stage_loss_grad(net: MultiTaskNet, m: ModalitySpec, flat_pred: np.ndarray,
                     targets: np.ndarray, rows: np.ndarray,
                     scale: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-row losses (NaN outside labelled rows) and the masked-loss
    gradient w.r.t. the flat stage output, in one pass."""
    B = flat_pred.shape[0]
    losses = np.full(B, np.nan)
    grad = np.zeros_like(flat_pred)
    if not rows.any():
        return losses, grad
    n = int(np.count_nonzero(rows))
    t = np.asarray(targets)[rows]
    if m.kind == CATEGORICAL:
        classes = t.reshape(n, net.pixels).astype(np.int64)
        if classes.min() < 0 or classes.max() >= m.num_classes:
            raise ValueError("target classes outside valid range reached the loss")
        logp = log_softmax(flat_pred[rows].reshape(n, m.num_classes, net.pixels), axis=1)
        picked = np.take_along_axis(logp, classes[:, None, :], axis=1)[:, 0, :]
        losses[rows] = -np.mean(picked, axis=1)
        g = np.exp(logp)
        np.put_along_axis(g, classes[:, None, :],
                          np.take_along_axis(g, classes[:, None, :], axis=1) - 1.0, axis=1)
        grad[rows] = g.reshape(n, -1) * (scale / (n * net.pixels))
    else:
        diff = flat_pred[rows] - t.reshape(n, -1)
        losses[rows] = np.mean(np.square(diff), axis=1)
        grad[rows] = diff * (2.0 * scale / (n * flat_pred.shape[1]))
    return losses, grad


def loss_and_grads(net: MultiTaskNet, fwd: ForwardPass, targets: dict[str, np.ndarray],
                   label_mask: np.ndarray, aux_targets: np.ndarray | None = None,
                   fit_aux: bool = False):
    """Masked loss, aux-head loss, and gradients for every parameter.

    ``aux_targets`` (per-sample loss values, treated as constants) drive the
    auxiliary head's regression; with ``fit_aux`` they default to the
    weighted per-sample losses of this very batch.  The aux gradient never
    reaches the encoder because the head consumes features as a detached
    input.
    """
    label_mask = np.asarray(label_mask, dtype=bool)
    if not label_mask.any():
        raise ValueError("nothing to train on: label mask is all zero")
    mask_rows = {m.name: label_mask[:, k] for k, m in enumerate(net.modalities)}

    p = net.params
    grads: dict[str, np.ndarray] = {}
    d_g = np.zeros_like(fwd.distill_in)
    stage_losses: dict[str, np.ndarray] = {}

    # Stage-2 losses -> distill heads and the concatenated input.
    for m in net.modalities:
        l2, ds2 = _stage_loss_grad(net, m, fwd.stage2[m.name],
                                   targets.get(m.name, np.empty(0)),
                                   mask_rows[m.name], m.loss_weight)
        stage_losses[m.name] = l2
        grads[f"distill_{m.name}_w"] = fwd.distill_in.T @ ds2
        grads[f"distill_{m.name}_b"] = ds2.sum(axis=0)
        d_g += ds2 @ p[f"distill_{m.name}_w"].T

    d_f = d_g[:, : net.config.hidden_dim].copy()

    # Stage-1 heads: direct stage-1 loss plus the path through distillation.
    total = 0.0
    per_mod: dict[str, float] = {}
    for m in net.modalities:
        l1, ds1 = _stage_loss_grad(net, m, fwd.stage1[m.name],
                                   targets.get(m.name, np.empty(0)),
                                   mask_rows[m.name], m.loss_weight)
        stage_losses[m.name] = stage_losses[m.name] + l1
        rows = mask_rows[m.name]
        loss_k = float(np.mean(stage_losses[m.name][rows])) if rows.any() else 0.0
        per_mod[m.name] = loss_k
        total += m.loss_weight * loss_k
        if not net.config.detach_stage1:
            dc = d_g[:, net.contrib_slices[m.name]].copy()
            dc[fwd.injected_rows[m.name]] = 0.0  # injected rows fed constants
            if m.kind == CATEGORICAL:
                B = fwd.x.shape[0]
                dprob = dc.reshape(B, m.num_classes, net.pixels)
                ds1 += softmax_vjp(fwd.stage1_probs[m.name], dprob, axis=1).reshape(B, -1)
            else:
                ds1 += dc
        grads[f"head_{m.name}_w"] = fwd.features.T @ ds1
        grads[f"head_{m.name}_b"] = ds1.sum(axis=0)
        d_f += ds1 @ p[f"head_{m.name}_w"].T

    if fit_aux and aux_targets is None and net.config.aux_head:
        aux_targets = np.zeros(fwd.x.shape[0])
        for m in net.modalities:
            vals = stage_losses[m.name]
            aux_targets += np.where(np.isnan(vals), 0.0, vals) * m.loss_weight

    aux_loss = 0.0
    if aux_targets is not None:
        if not net.config.aux_head:
            raise ValueError("aux targets supplied but the aux head is disabled")
        B = fwd.x.shape[0]
        diff = fwd.aux_pred - aux_targets
        aux_loss = float(np.mean(np.square(diff)))
        dz = (2.0 * diff / B) * sigmoid(fwd.aux_z)
        grads["aux2_w"] = fwd.aux_a.T @ dz[:, None]
        grads["aux2_b"] = np.array([dz.sum()])
        da = dz[:, None] @ p["aux2_w"].T
        dza = da * (fwd.aux_za > 0)
        grads["aux1_w"] = fwd.features.T @ dza
        grads["aux1_b"] = dza.sum(axis=0)
        # No d_f contribution: encoder gradient is blocked by design.

    # Encoder backward.
    if fwd.noise.drop2 is not None:
        d_f = d_f * fwd.noise.drop2
    dz2 = d_f * (fwd.z2 > 0)
    grads["enc2_w"] = fwd.d1.T @ dz2
    grads["enc2_b"] = dz2.sum(axis=0)
    dd1 = dz2 @ p["enc2_w"].T
    if fwd.noise.drop1 is not None:
        dd1 = dd1 * fwd.noise.drop1
    dz1 = dd1 * (fwd.z1 > 0)
    grads["enc1_w"] = fwd.x.T @ dz1
    grads["enc1_b"] = dz1.sum(axis=0)

    for name, arr in p.items():
        if name not in grads:
            grads[name] = np.zeros_like(arr)
    return total, per_mod, aux_loss, grads


@dataclass
class TrainingPool:
    """Stacked training arrays; targets may carry poison sentinels on
    unlabelled pairs (they must never be read)."""

    inputs: np.ndarray  # [N, input_dim] flattened float64
    targets: dict[str, np.ndarray]
    label_mask: np.ndarray  # [N, K] bool


def make_pool(records: list[SampleRecord], label_mask: np.ndarray,
              modalities: list[ModalitySpec], poison_unlabelled: bool = False) -> TrainingPool:
    """Stack records into arrays; optionally poison unlabelled targets.

    Poison sentinels (NaN for continuous, -1 for categorical) turn any label
    leak into a loud failure: NaN would trip the finite checks and -1 the
    class-range validation.
    """
    inputs = np.stack([r.input.reshape(-1) for r in records]).astype(np.float64)
    label_mask = np.asarray(label_mask, dtype=bool)
    targets = {}
    for k, m in enumerate(modalities):
        stacked = np.stack([r.targets[m.name] for r in records])
        if poison_unlabelled:
            stacked = stacked.copy()
            unlabelled = ~label_mask[:, k]
            if m.kind == CATEGORICAL:
                stacked[unlabelled] = -1
            else:
                stacked[unlabelled] = np.nan
        targets[m.name] = stacked
    return TrainingPool(inputs=inputs, targets=targets, label_mask=label_mask)


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 128
    base_lr: float = 2e-3
    weight_decay: float = 1e-4
    teacher_forcing_p: float = 0.5
    reinit_each_iteration: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not 0.0 <= self.teacher_forcing_p <= 1.0:
            raise ValueError("teacher_forcing_p must be a probability")


def train(net: MultiTaskNet, pool: TrainingPool, config: TrainConfig) -> list[float]:
    """Train on every sample with at least one labelled modality.

    Adam with the polynomial LR schedule; each epoch reshuffles with a
    seeded stream; teacher forcing injects ground truth of labelled
    modalities into the distillation stage with probability
    ``teacher_forcing_p`` per (sample, modality) per batch.  Returns the
    per-epoch mean training loss.
    """
    config.validate()
    rows = np.flatnonzero(pool.label_mask.any(axis=1))
    if rows.size == 0:
        raise ValueError("nothing to train on: empty labelled pool")

    root = SeededRng(config.seed)
    state = AdamState.for_params(net.params, config.base_lr, config.weight_decay)
    trace = []
    for epoch in range(config.epochs):
        lr = poly_lr(config.base_lr, epoch, config.epochs)
        order = rows[root.split(0, epoch).generator().permutation(rows.size)]
        batch_losses = []
        for b, start in enumerate(range(0, order.size, config.batch_size)):
            idx = order[start: start + config.batch_size]
            brng = root.split(1, epoch, b)
            loss = _train_batch(net, pool, idx, config, state, lr, brng)
            batch_losses.append(loss)
        trace.append(float(np.mean(batch_losses)))
    return trace


def _train_batch(net: MultiTaskNet, pool: TrainingPool, idx: np.ndarray,
                 config: TrainConfig, state: AdamState, lr: float,
                 rng: SeededRng) -> float:
    x = pool.inputs[idx]
    mask = pool.label_mask[idx]
    targets = {m.name: pool.targets[m.name][idx] for m in net.modalities}

    noise = BatchNoise.sample(rng.split(0), x.shape[0], net.config.hidden_dim,
                              net.config.dropout_rate)
    injection = LabelInjection.empty()
    if config.teacher_forcing_p > 0:
        tf_gen = rng.split(1).generator()
        for k, m in enumerate(net.modalities):
            pick = mask[:, k] & (tf_gen.random(x.shape[0]) < config.teacher_forcing_p)
            if pick.any():
                injection.values[m.name] = targets[m.name]
                injection.rows[m.name] = pick

    fwd = _forward(net, x, injection, noise)
    total, _, aux_loss, grads = loss_and_grads(net, fwd, targets, mask, fit_aux=True)
    if not np.isfinite(total) or not np.isfinite(aux_loss):
        raise NonFiniteError("non-finite training loss; a bad target reached the loss")
    adam_step(net.params, grads, state, lr)
    return total


def predict(net: MultiTaskNet, inputs: np.ndarray,
            injection: LabelInjection | None = None) -> dict[str, np.ndarray]:
    """Deterministic stage-2 predictions, [N, C, H, W] per modality."""
    flat = inputs.reshape(inputs.shape[0], -1).astype(np.float64)
    fwd = _forward(net, flat, injection, BatchNoise())
    return {m.name: fwd.stage2[m.name].reshape(flat.shape[0], m.channels, net.H, net.W)
            for m in net.modalities}


def encoder_features(net: MultiTaskNet, inputs: np.ndarray) -> np.ndarray:
    """Deterministic encoder features, [N, hidden]; the core-set geometry."""
    flat = inputs.reshape(inputs.shape[0], -1).astype(np.float64)
    fwd = _forward(net, flat, None, BatchNoise())
    return fwd.features


def aux_loss_head_forward(net: MultiTaskNet, x: np.ndarray):
    """Predicted per-sample loss (non-negative, via softplus)."""
    if not net.config.aux_head:
        raise ValueError("aux head is disabled for this network")
    single = x.ndim == 3
    if single:
        x = x[None]
    flat = x.reshape(x.shape[0], -1).astype(np.float64)
    fwd = _forward(net, flat, None, BatchNoise())
    return float(fwd.aux_pred[0]) if single else fwd.aux_pred


def save_checkpoint(net: MultiTaskNet, path_prefix: str | Path) -> tuple[Path, Path]:
    """Persist parameters as manifest + float64 blob (same container as data)."""
    prefix = Path(path_prefix)
    names = sorted(net.params)
    offsets, chunks, offset = [], [], 0
    for name in names:
        raw = np.ascontiguousarray(net.params[name], dtype="<f8").tobytes()
        offsets.append(offset)
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "kind": "checkpoint",
        "names": names,
        "shapes": {n: list(net.params[n].shape) for n in names},
        "offsets": offsets,
    }
    manifest_path = prefix.with_suffix(".manifest")
    blob_path = prefix.with_suffix(".blob")
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    blob_path.write_bytes(b"".join(chunks))
    return manifest_path, blob_path


def load_checkpoint(net: MultiTaskNet, path_prefix: str | Path) -> None:
    """Load parameters saved by :func:`save_checkpoint` into ``net``."""
    prefix = Path(path_prefix)
    manifest = json.loads(prefix.with_suffix(".manifest").read_text())
    if manifest.get("version") != CHECKPOINT_VERSION or manifest.get("kind") != "checkpoint":
        raise ValueError("not a compatible checkpoint manifest")
    blob = prefix.with_suffix(".blob").read_bytes()
    for name, offset in zip(manifest["names"], manifest["offsets"]):
        shape = tuple(manifest["shapes"][name])
        if name not in net.params or net.params[name].shape != shape:
            raise ValueError(f"checkpoint parameter {name} does not match the network")
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
        net.params[name] = arr.astype(np.float64)
        assert_finite(net.params[name], f"checkpoint parameter {name}")
