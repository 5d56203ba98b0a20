"""Dense ReLU network with dropout, softmax cross-entropy and Adam.

Everything is plain numpy in float64. Parameters live in one flat vector so
that aggregation, copying and serialization are single array operations;
per-layer weight and bias views are carved out of it on demand.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DivergenceError

DEFAULT_LAYER_DIMS = (43, 128, 64, 32, 15)


@dataclass(frozen=True)
class ArchitectureSpec:
    layer_dims: tuple[int, ...] = DEFAULT_LAYER_DIMS
    dropout_rate: float = 0.3
    # 1-based indices of hidden layers followed by dropout
    dropout_layers: frozenset[int] = frozenset({1, 2})

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "dropout_layers", frozenset(int(i) for i in self.dropout_layers))
        if len(dims) < 2:
            raise ValueError("layer_dims needs at least an input and an output width")
        if any(d < 1 for d in dims):
            raise ValueError(f"layer widths must be positive, got {dims}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        bad = [i for i in self.dropout_layers if not 1 <= i <= len(dims) - 2]
        if bad:
            raise ValueError(f"dropout_layers must index hidden layers 1..{len(dims) - 2}, got {sorted(bad)}")

    @property
    def num_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def num_classes(self) -> int:
        return self.layer_dims[-1]

    def layer_param_counts(self) -> list[int]:
        d = self.layer_dims
        return [d[k - 1] * d[k] + d[k] for k in range(1, len(d))]

    @property
    def param_count(self) -> int:
        return sum(self.layer_param_counts())

    @property
    def macs_per_sample(self) -> int:
        d = self.layer_dims
        return sum(d[k - 1] * d[k] for k in range(1, len(d)))


class ModelParams:
    """Flat float64 parameter vector plus the architecture that shapes it.

    Canonical order is W_1, b_1, W_2, b_2, ... with W_k stored row-major as
    (d_k, d_{k-1}).
    """

    __slots__ = ("spec", "flat")

    def __init__(self, spec: ArchitectureSpec, flat: np.ndarray):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (spec.param_count,):
            raise ValueError(f"expected {spec.param_count} parameters, got shape {flat.shape}")
        self.spec = spec
        self.flat = flat

    def _offsets(self):
        d = self.spec.layer_dims
        pos = 0
        for k in range(1, len(d)):
            w_end = pos + d[k] * d[k - 1]
            b_end = w_end + d[k]
            yield (pos, w_end, b_end, d[k], d[k - 1])
            pos = b_end

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(W_k, b_k) views into ``flat``; writes through."""
        out = []
        for start, w_end, b_end, rows, cols in self._offsets():
            out.append((self.flat[start:w_end].reshape(rows, cols), self.flat[w_end:b_end]))
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(self.spec, self.flat.copy())

    def zeros_like(self) -> "ModelParams":
        return ModelParams(self.spec, np.zeros_like(self.flat))

    def __len__(self) -> int:
        return self.flat.size

    def __repr__(self) -> str:
        return f"ModelParams(dims={self.spec.layer_dims}, n={self.flat.size})"


def init_params(spec: ArchitectureSpec, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = ModelParams(spec, np.zeros(spec.param_count))
    for W, _ in params.layers():
        fan_out, fan_in = W.shape
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        W[...] = rng.uniform(-bound, bound, size=W.shape)
    return params


def _check_batch(spec: ArchitectureSpec, features: np.ndarray, labels: np.ndarray | None = None):
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.layer_dims[0]:
        raise ValueError(f"features must have shape (n, {spec.layer_dims[0]}), got {x.shape}")
    if labels is not None:
        y = np.asarray(labels)
        if y.shape != (x.shape[0],):
            raise ValueError(f"labels shape {y.shape} does not match {x.shape[0]} rows")
        if y.size and (y.min() < 0 or y.max() >= spec.num_classes):
            raise ValueError(f"labels must lie in [0, {spec.num_classes})")
        return x, y.astype(np.intp, copy=False)
    return x, None


@dataclass
class ForwardCache:
    inputs: list[np.ndarray] = field(default_factory=list)  # input to each layer (post-dropout)
    pre_relu: list[np.ndarray] = field(default_factory=list)
    masks: list[np.ndarray | None] = field(default_factory=list)
    logits: np.ndarray | None = None


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward(params: ModelParams, features: np.ndarray, train: bool = False,
            rng: np.random.Generator | None = None) -> tuple[np.ndarray, ForwardCache]:
    """Return class probabilities and the activations needed by backprop.

    In train mode, hidden layers listed in ``spec.dropout_layers`` use inverted
    dropout driven by ``rng``. Eval mode never touches ``rng``.
    """
    spec = params.spec
    x, _ = _check_batch(spec, features)
    p = spec.dropout_rate
    use_dropout = train and p > 0.0
    if use_dropout and rng is None:
        raise ValueError("train-mode forward with dropout needs an rng")
    cache = ForwardCache()
    h = x
    layers = params.layers()
    last = len(layers) - 1
    for k, (W, b) in enumerate(layers):
        cache.inputs.append(h)
        z = h @ W.T + b
        if k == last:
            cache.logits = z
            break
        cache.pre_relu.append(z)
        h = np.maximum(z, 0.0)
        if use_dropout and (k + 1) in spec.dropout_layers:
            mask = (rng.random(h.shape) >= p) / (1.0 - p)
            h = h * mask
            cache.masks.append(mask)
        else:
            cache.masks.append(None)
    logp = _log_softmax(cache.logits)
    return np.exp(logp), cache


def per_sample_losses(params: ModelParams, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Eval-mode cross-entropy per row."""
    x, y = _check_batch(params.spec, features, labels)
    _, cache = forward(params, x, train=False)
    logp = _log_softmax(cache.logits)
    return -logp[np.arange(y.size), y]


def loss_and_grads(params: ModelParams, features: np.ndarray, labels: np.ndarray,
                   rng: np.random.Generator | None = None, train: bool = True,
                   return_sample_losses: bool = False):
    """Mean cross-entropy over the batch and its gradient w.r.t. ``params``.

    The gradient flows through the same dropout masks used in the forward
    pass. Returns ``(loss, grads)`` or ``(loss, grads, sample_losses)``.
    """
    x, y = _check_batch(params.spec, features, labels)
    n = y.size
    if n == 0:
        raise ValueError("empty batch")
    probs, cache = forward(params, x, train=train, rng=rng)
    logp = _log_softmax(cache.logits)
    sample_losses = -logp[np.arange(n), y]
    loss = float(sample_losses.mean())
    if not np.isfinite(loss):
        raise DivergenceError("non-finite training loss")

    grads = params.zeros_like()
    glayers = grads.layers()
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    for k in range(len(glayers) - 1, -1, -1):
        gW, gb = glayers[k]
        gW[...] = delta.T @ cache.inputs[k]
        gb[...] = delta.sum(axis=0)
        if k == 0:
            break
        W, _ = params.layers()[k]
        delta = delta @ W
        mask = cache.masks[k - 1]
        if mask is not None:
            delta = delta * mask
        delta = delta * (cache.pre_relu[k - 1] > 0.0)
    if return_sample_losses:
        return loss, grads, sample_losses
    return loss, grads


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: ModelParams, **kwargs) -> "AdamState":
        return cls(np.zeros_like(params.flat), np.zeros_like(params.flat), **kwargs)


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState, lr: float) -> None:
    """In-place bias-corrected Adam update of ``params`` and ``state``."""
    if grads.flat.shape != params.flat.shape:
        raise ValueError("gradient and parameter shapes differ")
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    g = grads.flat
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    update = lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if not np.all(np.isfinite(update)):
        raise DivergenceError("non-finite Adam update")
    params.flat -= update


def iter_minibatches(n: int, batch_size: int, rng: np.random.Generator) -> Iterable[np.ndarray]:
    """Shuffled index batches covering ``range(n)``; the last partial batch is kept."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def evaluate(params: ModelParams, features: np.ndarray, labels: np.ndarray,
             chunk_size: int = 8192) -> tuple[float, np.ndarray]:
    """Sample-weighted mean cross-entropy and argmax predictions (eval mode)."""
    x, y = _check_batch(params.spec, features, labels)
    n = y.size
    if n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    total = 0.0
    preds = np.empty(n, dtype=np.intp)
    for start in range(0, n, chunk_size):
        sl = slice(start, start + chunk_size)
        _, cache = forward(params, x[sl], train=False)
        logp = _log_softmax(cache.logits)
        total += float(-logp[np.arange(logp.shape[0]), y[sl]].sum())
        preds[sl] = np.argmax(cache.logits, axis=1)  # first max wins
    return total / n, preds


def train_epochs(params: ModelParams, features: np.ndarray, labels: np.ndarray, epochs: int,
                 lr: float, batch_size: int, rng: np.random.Generator,
                 state: AdamState | None = None) -> tuple[list[float], np.ndarray | None]:
    """Run ``epochs`` passes of minibatch Adam in place.

    Returns the per-epoch mean training losses and the per-sample losses seen
    during the last epoch (indexed by row, ``None`` if ``epochs == 0``).
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    x, y = _check_batch(params.spec, features, labels)
    state = state if state is not None else AdamState.fresh(params)
    epoch_losses: list[float] = []
    last_losses = None
    for _ in range(epochs):
        last_losses = np.empty(y.size)
        running = 0.0
        for idx in iter_minibatches(y.size, batch_size, rng):
            loss, grads, sl = loss_and_grads(params, x[idx], y[idx], rng=rng,
                                             return_sample_losses=True)
            last_losses[idx] = sl
            running += loss * idx.size
            adam_step(params, grads, state, lr)
        epoch_losses.append(running / y.size)
    return epoch_losses, last_losses

