"""Dense trunk-plus-two-heads network with hand-written gradients.

A model is a ReLU trunk feeding two affine heads: a C-way classification
head and a single-logit auxiliary head whose sigmoid output scores domain
membership. The trunk arrays are stored exactly once, so an update coming
through either head's loss is visible to both forward passes.

Everything is float64 numpy. Weight matrices are (out_dim, in_dim); a
batch X of shape (n, in_dim) flows as X @ W.T + b.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOSS_CLS = "cls"
LOSS_AUX = "aux"
LOSS_JOINT = "joint"
LOSS_SPECS = (LOSS_CLS, LOSS_AUX, LOSS_JOINT)

BCE_EPS = 1e-12


@dataclass
class ArchSpec:
    """Network shape: input width, trunk widths, class count."""

    input_dim: int
    hidden_dims: tuple[int, ...]
    num_classes: int

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if len(self.hidden_dims) == 0:
            raise ValueError("hidden_dims must be non-empty")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden_dims must all be positive")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")

    def param_count(self) -> int:
        total = 0
        fan_in = self.input_dim
        for h in self.hidden_dims:
            total += h * fan_in + h
            fan_in = h
        total += self.num_classes * fan_in + self.num_classes
        total += 1 * fan_in + 1
        return total


@dataclass
class LayerParams:
    """One affine layer: weights (out, in) and bias (out,)."""

    weights: np.ndarray
    bias: np.ndarray


@dataclass
class PersonalModel:
    """Shared trunk plus classification and auxiliary heads."""

    trunk: list[LayerParams]
    cls_head: LayerParams
    aux_head: LayerParams
    arch: ArchSpec


@dataclass
class GradientSet:
    """Gradients with the same layout as the model they came from."""

    trunk: list[LayerParams]
    cls_head: LayerParams
    aux_head: LayerParams


def init_layer(rng: np.random.Generator, out_dim: int, in_dim: int) -> LayerParams:
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    w = rng.uniform(-limit, limit, size=(out_dim, in_dim))
    return LayerParams(weights=w, bias=np.zeros(out_dim))


def init_model(arch: ArchSpec, seed) -> PersonalModel:
    """Glorot-uniform weights, zero biases, fully determined by seed.

    Draw order is fixed (trunk layers, then cls head, then aux head) so
    the same (arch, seed) always yields bitwise-identical parameters.
    """
    rng = np.random.default_rng(seed)
    trunk = []
    fan_in = arch.input_dim
    for h in arch.hidden_dims:
        trunk.append(init_layer(rng, h, fan_in))
        fan_in = h
    cls_head = init_layer(rng, arch.num_classes, fan_in)
    aux_head = init_layer(rng, 1, fan_in)
    return PersonalModel(trunk=trunk, cls_head=cls_head, aux_head=aux_head, arch=arch)


def iter_layers(obj):
    """Canonical layer order shared by models and gradient sets."""
    yield from obj.trunk
    yield obj.cls_head
    yield obj.aux_head


def iter_arrays(obj):
    for layer in iter_layers(obj):
        yield layer.weights
        yield layer.bias


def param_count(model: PersonalModel) -> int:
    return sum(a.size for a in iter_arrays(model))


def flatten_params(model) -> np.ndarray:
    return np.concatenate([a.ravel() for a in iter_arrays(model)])


def clone_model(model: PersonalModel) -> PersonalModel:
    return PersonalModel(
        trunk=[LayerParams(l.weights.copy(), l.bias.copy()) for l in model.trunk],
        cls_head=LayerParams(model.cls_head.weights.copy(), model.cls_head.bias.copy()),
        aux_head=LayerParams(model.aux_head.weights.copy(), model.aux_head.bias.copy()),
        arch=model.arch,
    )


def copy_into(dst: PersonalModel, src: PersonalModel) -> None:
    """Copy parameters of src into dst in place, preserving array aliasing."""
    for d, s in zip(iter_arrays(dst), iter_arrays(src)):
        if d.shape != s.shape:
            raise ValueError(f"shape mismatch {d.shape} vs {s.shape}")
        np.copyto(d, s)


def zeros_grads(model: PersonalModel) -> GradientSet:
    return GradientSet(
        trunk=[LayerParams(np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in model.trunk],
        cls_head=LayerParams(np.zeros_like(model.cls_head.weights), np.zeros_like(model.cls_head.bias)),
        aux_head=LayerParams(np.zeros_like(model.aux_head.weights), np.zeros_like(model.aux_head.bias)),
    )


def grads_add(dst: GradientSet, src: GradientSet) -> None:
    for d, s in zip(iter_arrays(dst), iter_arrays(src)):
        d += s


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=-1, keepdims=True)


def _trunk_forward(model: PersonalModel, X: np.ndarray):
    """Returns (activations, pre-activations); activations[0] is X."""
    acts = [X]
    zs = []
    for layer in model.trunk:
        z = acts[-1] @ layer.weights.T + layer.bias
        zs.append(z)
        acts.append(np.maximum(z, 0.0))
    return acts, zs


def _as_batch(model: PersonalModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.arch.input_dim:
        raise ValueError(
            f"expected features of width {model.arch.input_dim}, got shape {X.shape}"
        )
    return X


def class_logits(model: PersonalModel, X) -> np.ndarray:
    X = _as_batch(model, X)
    acts, _ = _trunk_forward(model, X)
    return acts[-1] @ model.cls_head.weights.T + model.cls_head.bias


def aux_scores(model: PersonalModel, X) -> np.ndarray:
    """Sigmoid outputs of the auxiliary head, shape (n,)."""
    X = _as_batch(model, X)
    acts, _ = _trunk_forward(model, X)
    v = acts[-1] @ model.aux_head.weights.T + model.aux_head.bias
    return sigmoid(v.ravel())


def forward(model: PersonalModel, x):
    """Single-sample forward pass.

    Returns (class logits (C,), aux score in [0, 1], activation cache).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.arch.input_dim:
        raise ValueError(
            f"expected a feature vector of width {model.arch.input_dim}, got shape {x.shape}"
        )
    acts, zs = _trunk_forward(model, x[None, :])
    h = acts[-1]
    logits = (h @ model.cls_head.weights.T + model.cls_head.bias)[0]
    score = float(sigmoid(h @ model.aux_head.weights.T + model.aux_head.bias)[0, 0])
    return logits, score, (acts, zs)


def softmax_cross_entropy(logits, label: int) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise ValueError("logits must be a vector")
    if not 0 <= int(label) < logits.shape[0]:
        raise ValueError(f"label {label} out of range for {logits.shape[0]} classes")
    m = logits.max()
    lse = m + np.log(np.exp(logits - m).sum())
    return float(lse - logits[int(label)])


def binary_cross_entropy(score, label) -> float:
    y = float(label)
    if y not in (0.0, 1.0):
        raise ValueError("binary label must be 0 or 1")
    s = min(max(float(score), BCE_EPS), 1.0 - BCE_EPS)
    return float(-(y * np.log(s) + (1.0 - y) * np.log(1.0 - s)))


def _mean_ce_rows(logits: np.ndarray, y: np.ndarray) -> float:
    m = logits.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))).ravel()
    return float(np.mean(lse - logits[np.arange(len(y)), y]))


def _mean_bce(scores: np.ndarray, y: np.ndarray) -> float:
    s = np.clip(scores, BCE_EPS, 1.0 - BCE_EPS)
    return float(np.mean(-(y * np.log(s) + (1.0 - y) * np.log(1.0 - s))))


def batch_loss(model: PersonalModel, X, y_cls=None, y_aux=None, loss_spec=LOSS_JOINT) -> float:
    """Mean loss over a batch; joint = mean CE + mean BCE."""
    if loss_spec not in LOSS_SPECS:
        raise ValueError(f"unknown loss_spec {loss_spec!r}")
    X = _as_batch(model, X)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    acts, _ = _trunk_forward(model, X)
    h = acts[-1]
    total = 0.0
    if loss_spec in (LOSS_CLS, LOSS_JOINT):
        y = np.asarray(y_cls, dtype=np.int64)
        logits = h @ model.cls_head.weights.T + model.cls_head.bias
        total += _mean_ce_rows(logits, y)
    if loss_spec in (LOSS_AUX, LOSS_JOINT):
        ya = np.asarray(y_aux, dtype=np.float64)
        v = (h @ model.aux_head.weights.T + model.aux_head.bias).ravel()
        total += _mean_bce(sigmoid(v), ya)
    return total


def _grads_and_loss(model: PersonalModel, X, y_cls=None, y_aux=None, loss_spec=LOSS_JOINT):
    """Backward pass over a batch; returns (GradientSet, mean loss).

    Gradients are means over the batch. Under `joint` the trunk receives
    the sum of the classification-loss and auxiliary-loss streams; each
    head only sees its own loss.
    """
    if loss_spec not in LOSS_SPECS:
        raise ValueError(f"unknown loss_spec {loss_spec!r}")
    X = _as_batch(model, X)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    acts, zs = _trunk_forward(model, X)
    h = acts[-1]
    grads = zeros_grads(model)
    d_h = np.zeros_like(h)
    loss = 0.0

    if loss_spec in (LOSS_CLS, LOSS_JOINT):
        if y_cls is None:
            raise ValueError("y_cls required for cls/joint loss")
        y = np.asarray(y_cls, dtype=np.int64)
        if y.shape != (n,):
            raise ValueError("y_cls must have one label per row")
        logits = h @ model.cls_head.weights.T + model.cls_head.bias
        loss += _mean_ce_rows(logits, y)
        delta = softmax(logits)
        delta[np.arange(n), y] -= 1.0
        delta /= n
        grads.cls_head.weights += delta.T @ h
        grads.cls_head.bias += delta.sum(axis=0)
        d_h += delta @ model.cls_head.weights

    if loss_spec in (LOSS_AUX, LOSS_JOINT):
        if y_aux is None:
            raise ValueError("y_aux required for aux/joint loss")
        ya = np.asarray(y_aux, dtype=np.float64)
        if ya.shape != (n,):
            raise ValueError("y_aux must have one label per row")
        v = (h @ model.aux_head.weights.T + model.aux_head.bias).ravel()
        s = sigmoid(v)
        loss += _mean_bce(s, ya)
        delta_a = (s - ya) / n
        grads.aux_head.weights += (delta_a @ h)[None, :]
        grads.aux_head.bias += np.array([delta_a.sum()])
        d_h += np.outer(delta_a, model.aux_head.weights.ravel())

    delta = d_h
    for i in reversed(range(len(model.trunk))):
        dz = delta * (zs[i] > 0)
        grads.trunk[i].weights += dz.T @ acts[i]
        grads.trunk[i].bias += dz.sum(axis=0)
        if i > 0:
            delta = dz @ model.trunk[i].weights
    return grads, loss


def backward(model: PersonalModel, X, y_cls=None, y_aux=None, loss_spec=LOSS_JOINT) -> GradientSet:
    grads, _ = _grads_and_loss(model, X, y_cls=y_cls, y_aux=y_aux, loss_spec=loss_spec)
    return grads


def sgd_step(model: PersonalModel, grads: GradientSet, lr: float, weight_decay: float = 0.0) -> None:
    """Decoupled step: p <- p - lr * (g + weight_decay * p), in place."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    if weight_decay < 0:
        raise ValueError("weight_decay must be non-negative")
    for p, g in zip(iter_arrays(model), iter_arrays(grads)):
        p -= lr * (g + weight_decay * p)
