"""Deterministic array arithmetic, splittable seeded randomness, and Adam.

Everything downstream (data synthesis, the multi-task network, MC-Dropout
sampling, the active-learning loop) builds on the handful of primitives in
this module.  All arrays are float64 and all randomness flows through
:class:`SeededRng` so a run is reproducible bit-for-bit from a single seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

try:
    from numba import njit as _njit
except ImportError:  # pragma: no cover - numba is an optional speedup
    _njit = None

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class NonFiniteError(ValueError):
    """An array that must be finite contains NaN or Inf."""


def assert_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values in {what}")


@dataclass(frozen=True)
class SeededRng:
    """A splittable random stream keyed by (seed, stream path).

    Streams are derived through :meth:`split`, never by drawing, so two
    children obtained in either order produce the same values: the stream
    identity is the path, not the call sequence.  Generators use the
    counter-based Philox bit generator seeded through ``SeedSequence``,
    which is stable across platforms.
    """

    seed: int
    stream: tuple[int, ...] = ()

    def split(self, *ids: int) -> "SeededRng":
        """Derive an independent child stream."""
        return SeededRng(self.seed, self.stream + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream."""
        seq = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        return np.random.Generator(np.random.Philox(seq))

    def fold(self) -> int:
        """Collapse the stream into a plain 64-bit seed (for configs)."""
        seq = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        state = seq.generate_state(2, dtype=np.uint32)
        return int(state[0]) | (int(state[1]) << 32)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Probabilities along ``axis``, stable under large logits."""
    logits = np.asarray(logits, dtype=np.float64)
    assert_finite(logits, "softmax logits")
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_vjp(probs: np.ndarray, grad_out: np.ndarray, axis: int = -1) -> np.ndarray:
    """Backward pass of softmax: d(loss)/d(logits) given d(loss)/d(probs)."""
    inner = np.sum(probs * grad_out, axis=axis, keepdims=True)
    return probs * (grad_out - inner)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def dropout_mask(rng: SeededRng, shape: tuple[int, ...], rate: float) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability ``rate``, else 1/(1-rate).

    The expectation of every element is 1, so a forward pass through an
    active mask is scale-free and MC-Dropout needs no inference rescaling.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape, dtype=np.float64)
    u = rng.generator().random(shape)
    return (u >= rate).astype(np.float64) / (1.0 - rate)


def poly_lr(base_lr: float, epoch: int, total_epochs: int, power: float = 0.9) -> float:
    """Polynomial decay: base_lr * (1 - epoch/total_epochs)^power."""
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    return base_lr * (1.0 - epoch / total_epochs) ** power


Params = dict[str, np.ndarray]


@dataclass
class AdamState:
    """Per-parameter Adam moments plus the shared step counter."""

    base_lr: float
    weight_decay: float
    step_count: int = 0
    first_moment: Params = field(default_factory=dict)
    second_moment: Params = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Params, base_lr: float, weight_decay: float) -> "AdamState":
        return cls(
            base_lr=base_lr,
            weight_decay=weight_decay,
            first_moment={k: np.zeros_like(v) for k, v in params.items()},
            second_moment={k: np.zeros_like(v) for k, v in params.items()},
        )


def _adam_update_numpy(p, g, m, v, decay_mult, step_scale, eps_scaled):
    if decay_mult != 1.0:
        p *= decay_mult
    m *= ADAM_BETA1
    m += (1.0 - ADAM_BETA1) * g
    v *= ADAM_BETA2
    v += (1.0 - ADAM_BETA2) * np.square(g)
    p -= step_scale * m / (np.sqrt(v) + eps_scaled)


if _njit is not None:
    @_njit(cache=True)
    def _adam_update_fused(p, g, m, v, decay_mult, step_scale, eps_scaled):  # pragma: no cover
        for i in range(p.size):
            mi = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i]
            vi = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i]
            m[i] = mi
            v[i] = vi
            p[i] = p[i] * decay_mult - step_scale * mi / (np.sqrt(vi) + eps_scaled)
else:
    _adam_update_fused = None


def adam_step(params: Params, grads: Params, state: AdamState, lr: float) -> None:
    """One Adam update, in place, with decoupled weight decay.

    Weight decay shrinks parameters by lr*weight_decay*p before the Adam
    delta, so the moments never see the decay term.  Inputs are assumed
    finite; training guards the loss scalar instead of scanning every
    parameter array per step.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    if set(params) != set(grads):
        raise ValueError("params and grads have different keys")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    # sqrt(v/bc2) == sqrt(v)/sqrt(bc2); folding the scalars into the step
    # turns the whole update into one fused pass per parameter.
    step_scale = lr * np.sqrt(bc2) / bc1
    eps_scaled = ADAM_EPS * np.sqrt(bc2)
    decay_mult = 1.0 - lr * state.weight_decay
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {name}")
        m = state.first_moment[name]
        v = state.second_moment[name]
        if _adam_update_fused is not None and p.flags.c_contiguous and g.flags.c_contiguous:
            _adam_update_fused(p.reshape(-1), np.ascontiguousarray(g).reshape(-1),
                               m.reshape(-1), v.reshape(-1),
                               decay_mult, step_scale, eps_scaled)
        else:
            _adam_update_numpy(p, g, m, v, decay_mult, step_scale, eps_scaled)
