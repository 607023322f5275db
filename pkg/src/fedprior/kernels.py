"""Numeric kernels behind the network engine, with two interchangeable backends.

All hot inner loops of training live here: dense affine maps, softmax,
loss gradients at the logit layer, and the Adam update. Two implementations
are provided:

* ``NUMPY`` -- vectorized numpy, always available.
* ``NUMBA`` -- loop kernels compiled with ``@njit(cache=True)``; ``None``
  when numba is not installed.

The active backend is chosen once at import time from the environment
variable ``FEDPRIOR_BACKEND`` (``auto`` | ``numba`` | ``numpy``, default
``auto`` = numba when available). ``benchmarks/bench_kernels.py`` compares
the two directly.

Kernels assume C-contiguous float64 inputs and in-range int64 label arrays;
callers validate (the numba backend does not bounds-check).
"""

import os
from types import SimpleNamespace

import numpy as np

# floor for probabilities inside log(); keeps losses finite at p == 0
PROB_FLOOR = 1e-12
# floor for gradient denominators only (avoids inf, practically unreachable)
_DENOM_FLOOR = 1e-300


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------

def _affine_np(x, w, b):
    return x @ w.T + b


def _relu_np(z):
    return np.maximum(z, 0.0)


def _softmax_np(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _ce_loss_grad_np(probs, labels):
    """Summed negative log-likelihood and per-row d(loss)/d(logits)."""
    n = probs.shape[0]
    rows = np.arange(n)
    p = probs[rows, labels]
    loss = -float(np.log(np.maximum(p, PROB_FLOOR)).sum())
    d = probs.copy()
    d[rows, labels] -= 1.0
    return loss, d


def _transition_loss_grad_np(probs, tmat, tcol, labels):
    """Loss/grad of -log of the renormalized linear head output.

    probs: (n, K) softmax rows; tmat: (M, K); tcol: (K,) column sums of tmat;
    labels in [0, M). Returns (summed loss, per-row d(loss)/d(logits)).
    """
    n = probs.shape[0]
    rows = np.arange(n)
    a = probs @ tmat.T
    z = a.sum(axis=1)
    ay = a[rows, labels]
    loss = -float(np.log(np.maximum(ay / z, PROB_FLOOR)).sum())
    v = tcol[None, :] / z[:, None] - tmat[labels] / np.maximum(ay, _DENOM_FLOOR)[:, None]
    d = probs * (v - (v * probs).sum(axis=1, keepdims=True))
    return loss, d


def _prop_loss_grad_np(probs, target):
    """Cross-entropy between a target proportion and the mean of probs rows."""
    n = probs.shape[0]
    phat = probs.sum(axis=0) / n
    loss = -float((target * np.log(np.maximum(phat, PROB_FLOOR))).sum())
    v = -(target / np.maximum(phat, PROB_FLOOR)) / n
    d = probs * (v[None, :] - (probs * v[None, :]).sum(axis=1, keepdims=True))
    return loss, d, phat


def _kl_loss_grad_np(pref, probs):
    """Summed KL(pref || probs) over rows; grad w.r.t. the probs logits."""
    ratio = np.log(np.maximum(pref, PROB_FLOOR)) - np.log(np.maximum(probs, PROB_FLOOR))
    loss = float((pref * ratio).sum())
    return loss, probs - pref


def _backprop_delta_np(delta, w, z_prev):
    return (delta @ w) * (z_prev > 0.0)


def _weight_grad_np(delta, a_prev):
    return delta.T @ a_prev


def _bias_grad_np(delta):
    return delta.sum(axis=0)


def _input_grad_np(delta, w):
    return delta @ w


def _adam_update_np(p, g, m, v, t, lr, b1, b2, eps):
    """One bias-corrected Adam step on flat arrays; returns (p', m', v')."""
    m2 = b1 * m + (1.0 - b1) * g
    v2 = b2 * v + (1.0 - b2) * g * g
    mhat = m2 / (1.0 - b1 ** t)
    vhat = v2 / (1.0 - b2 ** t)
    return p - lr * mhat / (np.sqrt(vhat) + eps), m2, v2


NUMPY = SimpleNamespace(
    name="numpy",
    affine=_affine_np,
    relu=_relu_np,
    softmax=_softmax_np,
    ce_loss_grad=_ce_loss_grad_np,
    transition_loss_grad=_transition_loss_grad_np,
    prop_loss_grad=_prop_loss_grad_np,
    kl_loss_grad=_kl_loss_grad_np,
    backprop_delta=_backprop_delta_np,
    weight_grad=_weight_grad_np,
    bias_grad=_bias_grad_np,
    input_grad=_input_grad_np,
    adam_update=_adam_update_np,
)


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

def _build_numba_backend():
    from numba import njit

    @njit(cache=True)
    def affine(x, w, b):
        return np.dot(x, w.T) + b

    @njit(cache=True)
    def relu(z):
        return np.maximum(z, 0.0)

    @njit(cache=True)
    def softmax(z):
        n, k = z.shape
        out = np.empty_like(z)
        for i in range(n):
            m = z[i, 0]
            for j in range(1, k):
                if z[i, j] > m:
                    m = z[i, j]
            s = 0.0
            for j in range(k):
                e = np.exp(z[i, j] - m)
                out[i, j] = e
                s += e
            for j in range(k):
                out[i, j] /= s
        return out

    @njit(cache=True)
    def ce_loss_grad(probs, labels):
        n, k = probs.shape
        d = probs.copy()
        loss = 0.0
        for i in range(n):
            p = probs[i, labels[i]]
            if p < PROB_FLOOR:
                p = PROB_FLOOR
            loss -= np.log(p)
            d[i, labels[i]] -= 1.0
        return loss, d

    @njit(cache=True)
    def transition_loss_grad(probs, tmat, tcol, labels):
        n, k = probs.shape
        a = np.dot(probs, tmat.T)
        d = np.empty_like(probs)
        loss = 0.0
        for i in range(n):
            z = 0.0
            for j in range(a.shape[1]):
                z += a[i, j]
            ay = a[i, labels[i]]
            g = ay / z
            if g < PROB_FLOOR:
                g = PROB_FLOOR
            loss -= np.log(g)
            denom = ay if ay > _DENOM_FLOOR else _DENOM_FLOOR
            vs = 0.0
            for j in range(k):
                vj = tcol[j] / z - tmat[labels[i], j] / denom
                d[i, j] = vj
                vs += vj * probs[i, j]
            for j in range(k):
                d[i, j] = probs[i, j] * (d[i, j] - vs)
        return loss, d

    @njit(cache=True)
    def prop_loss_grad(probs, target):
        n, k = probs.shape
        phat = np.zeros(k)
        for i in range(n):
            for j in range(k):
                phat[j] += probs[i, j]
        for j in range(k):
            phat[j] /= n
        loss = 0.0
        v = np.empty(k)
        for j in range(k):
            pj = phat[j] if phat[j] > PROB_FLOOR else PROB_FLOOR
            loss -= target[j] * np.log(pj)
            v[j] = -(target[j] / pj) / n
        d = np.empty_like(probs)
        for i in range(n):
            vs = 0.0
            for j in range(k):
                vs += v[j] * probs[i, j]
            for j in range(k):
                d[i, j] = probs[i, j] * (v[j] - vs)
        return loss, d, phat

    @njit(cache=True)
    def kl_loss_grad(pref, probs):
        n, k = pref.shape
        loss = 0.0
        for i in range(n):
            for j in range(k):
                p = pref[i, j] if pref[i, j] > PROB_FLOOR else PROB_FLOOR
                q = probs[i, j] if probs[i, j] > PROB_FLOOR else PROB_FLOOR
                loss += pref[i, j] * (np.log(p) - np.log(q))
        return loss, probs - pref

    @njit(cache=True)
    def backprop_delta(delta, w, z_prev):
        d = np.dot(delta, w)
        return np.where(z_prev > 0.0, d, 0.0)

    @njit(cache=True)
    def weight_grad(delta, a_prev):
        return np.dot(delta.T, a_prev)

    @njit(cache=True)
    def bias_grad(delta):
        return np.sum(delta, axis=0)

    @njit(cache=True)
    def input_grad(delta, w):
        return np.dot(delta, w)

    @njit(cache=True)
    def adam_update(p, g, m, v, t, lr, b1, b2, eps):
        n = p.shape[0]
        p2 = np.empty_like(p)
        m2 = np.empty_like(m)
        v2 = np.empty_like(v)
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for i in range(n):
            m2[i] = b1 * m[i] + (1.0 - b1) * g[i]
            v2[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i]
            p2[i] = p[i] - lr * (m2[i] / c1) / (np.sqrt(v2[i] / c2) + eps)
        return p2, m2, v2

    return SimpleNamespace(
        name="numba",
        affine=affine,
        relu=relu,
        softmax=softmax,
        ce_loss_grad=ce_loss_grad,
        transition_loss_grad=transition_loss_grad,
        prop_loss_grad=prop_loss_grad,
        kl_loss_grad=kl_loss_grad,
        backprop_delta=backprop_delta,
        weight_grad=weight_grad,
        bias_grad=bias_grad,
        input_grad=input_grad,
        adam_update=adam_update,
    )


try:
    NUMBA = _build_numba_backend()
except ImportError:
    NUMBA = None


def _select_backend():
    want = os.environ.get("FEDPRIOR_BACKEND", "auto").lower()
    if want not in ("auto", "numba", "numpy"):
        raise ValueError(f"FEDPRIOR_BACKEND must be auto|numba|numpy, got {want!r}")
    if want == "numpy":
        return NUMPY
    if want == "numba":
        if NUMBA is None:
            raise RuntimeError("FEDPRIOR_BACKEND=numba but numba is not importable")
        return NUMBA
    return NUMBA if NUMBA is not None else NUMPY


ACTIVE = _select_backend()

affine = ACTIVE.affine
relu = ACTIVE.relu
softmax = ACTIVE.softmax
ce_loss_grad = ACTIVE.ce_loss_grad
transition_loss_grad = ACTIVE.transition_loss_grad
prop_loss_grad = ACTIVE.prop_loss_grad
kl_loss_grad = ACTIVE.kl_loss_grad
backprop_delta = ACTIVE.backprop_delta
weight_grad = ACTIVE.weight_grad
bias_grad = ACTIVE.bias_grad
input_grad = ACTIVE.input_grad
adam_update = ACTIVE.adam_update


def backend_name():
    return ACTIVE.name
