"""Minimal dense network engine: forward pass, softmax cross-entropy,
manual backpropagation (optionally through a fixed linear-normalize head),
Adam, an L1 penalty on weights, and a finite-difference gradient checker.

Everything is a pure function over immutable inputs; parameter and optimizer
state updates return fresh objects. Weight matrices are stored as
``(out, in)``; hidden activations are rectified linear.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels


class NonFiniteGradientError(ArithmeticError):
    """Raised when a gradient contains NaN/inf; surfaces training divergence."""


def _as_head_values(head):
    values = head.values if hasattr(head, "values") else np.asarray(head, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("transition head must be a 2-d matrix")
    return np.ascontiguousarray(values, dtype=np.float64)


@dataclass
class ModelParams:
    """Dense feedforward classifier weights: per-layer (out, in) matrices and biases."""

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must be non-empty and congruent")
        for idx, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {idx}: weight {w.shape} / bias {b.shape} mismatch")
            if min(w.shape) < 1:
                raise ValueError(f"layer {idx}: zero-width layer")
            if idx > 0 and w.shape[1] != self.weights[idx - 1].shape[0]:
                raise ValueError(f"layer {idx}: input width {w.shape[1]} does not chain")
        if not all(np.isfinite(w).all() and np.isfinite(b).all()
                   for w, b in zip(self.weights, self.biases)):
            raise ValueError("non-finite parameter entries")

    @property
    def in_dim(self):
        return self.weights[0].shape[1]

    @property
    def out_dim(self):
        return self.weights[-1].shape[0]

    @property
    def layer_sizes(self):
        return [self.in_dim] + [w.shape[0] for w in self.weights]

    def copy(self):
        return ModelParams([w.copy() for w in self.weights],
                           [b.copy() for b in self.biases])


@dataclass
class GradientSet:
    """Shape-congruent companion of ModelParams holding one gradient per tensor."""

    weights: list
    biases: list


@dataclass
class AdamState:
    m_w: list
    v_w: list
    m_b: list
    v_b: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.labels.ndim != 1:
            raise ValueError("inputs must be (n, d), labels (n,)")
        if self.inputs.shape[0] != self.labels.shape[0] or self.inputs.shape[0] < 1:
            raise ValueError("batch must contain at least one (input, label) pair")


def init_params(layer_sizes, rng):
    """Uniform +-sqrt(6/(in+out)) weights, zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ValueError(f"need at least input and output widths >= 1, got {sizes}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ModelParams(weights, biases)


def init_adam_state(params, beta1=0.9, beta2=0.999, eps=1e-8):
    return AdamState(
        m_w=[np.zeros_like(w) for w in params.weights],
        v_w=[np.zeros_like(w) for w in params.weights],
        m_b=[np.zeros_like(b) for b in params.biases],
        v_b=[np.zeros_like(b) for b in params.biases],
        step=0, beta1=beta1, beta2=beta2, eps=eps,
    )


def _forward_cache(params, inputs):
    x = np.ascontiguousarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ValueError(f"input width {x.shape} does not match first layer "
                         f"in-dimension {params.in_dim}")
    acts = [x]          # activation entering each layer
    pre = []            # pre-activation of each hidden layer
    h = x
    last = len(params.weights) - 1
    for idx, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = kernels.affine(h, w, b)
        if idx < last:
            pre.append(z)
            h = kernels.relu(z)
            acts.append(h)
        else:
            logits = z
    return logits, pre, acts


def forward(params, inputs):
    """Class scores (n, K) for a batch of inputs."""
    return _forward_cache(params, inputs)[0]


def softmax(logits):
    z = np.ascontiguousarray(logits, dtype=np.float64)
    if not np.isfinite(z).all():
        raise ValueError("softmax requires finite logits")
    return kernels.softmax(z)


def ce_loss(probs, labels):
    """Mean over the batch of -log(probs[i, labels[i]]), floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    p = probs[np.arange(len(labels)), labels]
    return float(-np.log(np.maximum(p, kernels.PROB_FLOOR)).mean())


def _check_labels(labels, count, what):
    if labels.min() < 0 or labels.max() >= count:
        raise ValueError(f"labels out of range for {what} (expected [0, {count}))")


def _l1_term(params, l1_weight):
    loss = l1_weight * sum(float(np.abs(w).sum()) for w in params.weights)
    grads = [l1_weight * np.sign(w) for w in params.weights]
    return loss, grads


def backward(params, batch, head=None, l1_weight=0.0):
    """Loss and exact analytic gradients of mean softmax cross-entropy.

    With ``head`` (a transition matrix, shape (M, K)) the per-sample chain is
    probs = softmax(logits), q = head @ probs, out = q / sum(q), and the loss
    is -log out[label]; without it, plain softmax cross-entropy over K
    classes. ``l1_weight`` adds an L1 penalty on weight matrices (not biases).
    """
    logits, pre, acts = _forward_cache(params, batch.inputs)
    probs = kernels.softmax(logits)
    n = batch.inputs.shape[0]
    if head is None:
        _check_labels(batch.labels, params.out_dim, "class scores")
        loss_sum, dlogits = kernels.ce_loss_grad(probs, batch.labels)
    else:
        hv = _as_head_values(head)
        if hv.shape[1] != params.out_dim:
            raise ValueError(f"head column count {hv.shape[1]} != model output "
                             f"width {params.out_dim}")
        _check_labels(batch.labels, hv.shape[0], "surrogate labels")
        if not (hv[batch.labels] > 0.0).any(axis=1).all():
            raise ValueError("all-zero head row observed in labels "
                             "(padded set index present in data)")
        loss_sum, dlogits = kernels.transition_loss_grad(
            probs, hv, np.ascontiguousarray(hv.sum(axis=0)), batch.labels)
    loss = loss_sum / n
    delta = np.ascontiguousarray(dlogits / n)

    gw = [None] * len(params.weights)
    gb = [None] * len(params.biases)
    for idx in range(len(params.weights) - 1, -1, -1):
        gw[idx] = kernels.weight_grad(delta, acts[idx])
        gb[idx] = kernels.bias_grad(delta)
        if idx > 0:
            delta = kernels.backprop_delta(delta, params.weights[idx], pre[idx - 1])
    if l1_weight:
        l1, l1_grads = _l1_term(params, l1_weight)
        loss += l1
        gw = [g + lg for g, lg in zip(gw, l1_grads)]
    return loss, GradientSet(gw, gb)


def loss_value(params, batch, head=None, l1_weight=0.0):
    """Forward-only loss, used by the finite-difference checker."""
    logits = forward(params, batch.inputs)
    probs = kernels.softmax(logits)
    if head is None:
        loss = ce_loss(probs, batch.labels)
    else:
        hv = _as_head_values(head)
        q = probs @ hv.T
        g = q[np.arange(len(batch.labels)), batch.labels] / q.sum(axis=1)
        loss = float(-np.log(np.maximum(g, kernels.PROB_FLOOR)).mean())
    if l1_weight:
        loss += _l1_term(params, l1_weight)[0]
    return loss


def backprop_from_dlogits(params, cache, dlogits, l1_weight=0.0):
    """Propagate an externally computed logit gradient back to all parameters."""
    _, pre, acts = cache
    delta = np.ascontiguousarray(dlogits, dtype=np.float64)
    gw = [None] * len(params.weights)
    gb = [None] * len(params.biases)
    for idx in range(len(params.weights) - 1, -1, -1):
        gw[idx] = kernels.weight_grad(delta, acts[idx])
        gb[idx] = kernels.bias_grad(delta)
        if idx > 0:
            delta = kernels.backprop_delta(delta, params.weights[idx], pre[idx - 1])
    if l1_weight:
        gw = [g + lg for g, lg in zip(gw, _l1_term(params, l1_weight)[1])]
    return GradientSet(gw, gb)


def input_gradient(params, cache, dlogits):
    """Gradient of the loss w.r.t. the batch inputs (for perturbation search)."""
    _, pre, acts = cache
    delta = np.ascontiguousarray(dlogits, dtype=np.float64)
    for idx in range(len(params.weights) - 1, 0, -1):
        delta = kernels.backprop_delta(delta, params.weights[idx], pre[idx - 1])
    return kernels.input_grad(delta, params.weights[0])


def forward_cache(params, inputs):
    """Forward pass retaining intermediates for custom logit-gradient backprop."""
    return _forward_cache(params, inputs)


def adam_step(params, grads, state, lr):
    """Standard Adam with bias correction; returns fresh (params, state)."""
    shapes_p = [w.shape for w in params.weights] + [b.shape for b in params.biases]
    shapes_g = [w.shape for w in grads.weights] + [b.shape for b in grads.biases]
    if shapes_p != shapes_g:
        raise ValueError("gradient shapes do not match parameters")
    for g in (*grads.weights, *grads.biases):
        if not np.isfinite(g).all():
            raise NonFiniteGradientError("non-finite gradient entry")
    t = state.step + 1
    new_w, new_mw, new_vw = [], [], []
    for p, g, m, v in zip(params.weights, grads.weights, state.m_w, state.v_w):
        p2, m2, v2 = kernels.adam_update(p.ravel(), np.ascontiguousarray(g).ravel(),
                                         m.ravel(), v.ravel(), t,
                                         lr, state.beta1, state.beta2, state.eps)
        new_w.append(p2.reshape(p.shape))
        new_mw.append(m2.reshape(p.shape))
        new_vw.append(v2.reshape(p.shape))
    new_b, new_mb, new_vb = [], [], []
    for p, g, m, v in zip(params.biases, grads.biases, state.m_b, state.v_b):
        p2, m2, v2 = kernels.adam_update(p, np.ascontiguousarray(g), m, v, t,
                                         lr, state.beta1, state.beta2, state.eps)
        new_b.append(p2)
        new_mb.append(m2)
        new_vb.append(v2)
    return (ModelParams(new_w, new_b),
            AdamState(new_mw, new_vw, new_mb, new_vb, t,
                      state.beta1, state.beta2, state.eps))


def fd_max_rel_error(params, loss_fn, grads, fd_eps):
    """Max relative error between ``grads`` and central differences of ``loss_fn``.

    The denominator is max(|analytic|, |numeric|, 1e-8) per coordinate.
    """
    worst = 0.0
    tensors = list(zip(params.weights, grads.weights)) + list(zip(params.biases, grads.biases))
    for tensor, grad in tensors:
        flat = tensor.ravel()
        gflat = np.asarray(grad).ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + fd_eps
            hi = loss_fn(params)
            flat[i] = orig - fd_eps
            lo = loss_fn(params)
            flat[i] = orig
            num = (hi - lo) / (2.0 * fd_eps)
            ana = gflat[i]
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, rel)
    return worst


def grad_check(params, batch, head=None, l1_weight=0.0, fd_eps=1e-5):
    """Compare the analytic gradient of ``backward`` against central differences."""
    if not (1e-7 < fd_eps < 1e-3):
        raise ValueError(f"fd_eps must lie in (1e-7, 1e-3), got {fd_eps}")
    _, grads = backward(params, batch, head=head, l1_weight=l1_weight)
    work = params.copy()
    return fd_max_rel_error(
        work, lambda p: loss_value(p, batch, head=head, l1_weight=l1_weight),
        grads, fd_eps)
