"""Pluggable local training objectives.

Every method exposes the same three-call surface used by the orchestrator:
``next_payload()`` draws the step's data from the objective's own batch
streams, ``step_grad(params, payload, rng)`` returns (loss, gradients) for
one optimizer step, and ``full_loss(params)`` is a deterministic value of
the method's objective over the client's whole local data, used for round
metrics. Swapping the method changes only this object, never the
aggregation path.

Ground-truth labels are available exclusively to the supervised objective,
which obtains them through the sealed store's explicit reveal gate.
"""

import logging
import math

import numpy as np

from . import kernels, nn
from .datagen import build_surrogate_dataset
from .priors import as_vector, estimate_surrogate_prior
from .transition import build_transition_matrix

log = logging.getLogger(__name__)

METHODS = ("fedul", "fedpl", "fedllp", "fedllp_vat", "fedavg_supervised")


class BatchStream:
    """Cyclic shuffled minibatch indices; reshuffles whenever exhausted."""

    def __init__(self, count, batch_size, rng):
        self.count = int(count)
        self.batch = self.count if batch_size is None else min(int(batch_size), self.count)
        self.rng = rng
        self._order = None
        self._pos = 0

    @property
    def steps_per_epoch(self):
        return max(1, math.ceil(self.count / self.batch)) if self.count else 0

    def next(self):
        if self._order is None or self._pos >= self.count:
            self._order = self.rng.permutation(self.count)
            self._pos = 0
        idx = self._order[self._pos:self._pos + self.batch]
        self._pos += self.batch
        return idx


def _combine(pairs):
    """Linear combination of (coefficient, GradientSet) pairs."""
    coef0, g0 = pairs[0]
    gw = [coef0 * w for w in g0.weights]
    gb = [coef0 * b for b in g0.biases]
    for coef, g in pairs[1:]:
        for i, w in enumerate(g.weights):
            gw[i] += coef * w
        for i, b in enumerate(g.biases):
            gb[i] += coef * b
    return nn.GradientSet(gw, gb)


def _zero_grads(params):
    return nn.GradientSet([np.zeros_like(w) for w in params.weights],
                          [np.zeros_like(b) for b in params.biases])


# ---------------------------------------------------------------------------
# loss functions (also exercised directly by tests and the oracle CLI)
# ---------------------------------------------------------------------------

def fedllp_loss(params, set_inputs, target_proportion, l1_weight=0.0):
    """Proportion risk for one unlabeled set: cross-entropy between the set's
    known class proportion and the mean of the model's softmax outputs."""
    target = as_vector(target_proportion)
    if set_inputs.shape[0] < 1:
        raise ValueError("proportion loss needs a non-empty set")
    cache = nn.forward_cache(params, set_inputs)
    probs = nn.softmax(cache[0])
    loss, dlogits, _ = kernels.prop_loss_grad(probs, target)
    grads = nn.backprop_from_dlogits(params, cache, dlogits, l1_weight=l1_weight)
    if l1_weight:
        loss += l1_weight * sum(float(np.abs(w).sum()) for w in params.weights)
    return loss, grads


def fedpl_loss(params, inputs, pseudo_labels, tau, mixup_alpha, mix_weight, rng,
               l1_weight=0.0):
    """Pseudo-label loss: cross-entropy on samples the model is confident
    about, boosted by one mixed batch pairing confident with unconfident
    samples (mixing coefficient drawn from Beta(mixup_alpha, mixup_alpha))."""
    probs = nn.softmax(nn.forward(params, inputs))
    conf = probs.max(axis=1)
    hi = np.flatnonzero(conf >= tau)
    lo = np.flatnonzero(conf < tau)

    loss = 0.0
    parts = []
    if hi.size:
        fix_loss, fix_grads = nn.backward(
            params, nn.Batch(inputs[hi], pseudo_labels[hi]))
        loss += fix_loss
        parts.append((1.0, fix_grads))
    if mix_weight and hi.size and lo.size:
        hi_perm = hi[rng.permutation(hi.size)]
        lo_perm = lo[rng.permutation(lo.size)]
        pairs = min(hi.size, lo.size)
        hi_perm, lo_perm = hi_perm[:pairs], lo_perm[:pairs]
        lam = float(rng.beta(mixup_alpha, mixup_alpha))
        x_mix = lam * inputs[hi_perm] + (1.0 - lam) * inputs[lo_perm]
        cache = nn.forward_cache(params, x_mix)
        mix_probs = nn.softmax(cache[0])
        y_hi = pseudo_labels[hi_perm]
        y_lo = pseudo_labels[lo_perm]
        mix_loss = lam * nn.ce_loss(mix_probs, y_hi) + (1 - lam) * nn.ce_loss(mix_probs, y_lo)
        d = mix_probs.copy()
        rows = np.arange(pairs)
        d[rows, y_hi] -= lam
        d[rows, y_lo] -= 1.0 - lam
        mix_grads = nn.backprop_from_dlogits(params, cache, d / pairs)
        loss += mix_weight * mix_loss
        parts.append((mix_weight, mix_grads))

    grads = _combine(parts) if parts else _zero_grads(params)
    if l1_weight:
        l1_loss = l1_weight * sum(float(np.abs(w).sum()) for w in params.weights)
        loss += l1_loss
        for i, w in enumerate(params.weights):
            grads.weights[i] = grads.weights[i] + l1_weight * np.sign(w)
    return loss, grads


def vat_consistency(params, inputs, xi, radius, power_iters, rng):
    """KL consistency against an adversarial input shift found by power
    iteration on the divergence curvature; the reference prediction is
    treated as constant (no gradient flows through it)."""
    n = inputs.shape[0]
    p_ref = nn.softmax(nn.forward(params, inputs))
    direction = rng.standard_normal(inputs.shape)
    direction = _normalize_rows(direction, rng)
    for _ in range(power_iters):
        cache = nn.forward_cache(params, inputs + xi * direction)
        q = nn.softmax(cache[0])
        _, dlogits = kernels.kl_loss_grad(p_ref, q)
        direction = _normalize_rows(nn.input_gradient(params, cache, dlogits), rng)
    cache = nn.forward_cache(params, inputs + radius * direction)
    q = nn.softmax(cache[0])
    loss_sum, dlogits = kernels.kl_loss_grad(p_ref, q)
    grads = nn.backprop_from_dlogits(params, cache, dlogits / n)
    return loss_sum / n, grads


def _normalize_rows(d, rng):
    norms = np.linalg.norm(d, axis=1, keepdims=True)
    dead = norms[:, 0] == 0.0
    if dead.any():
        fallback = rng.standard_normal((int(dead.sum()), d.shape[1]))
        fallback /= np.linalg.norm(fallback, axis=1, keepdims=True)
        d = d.copy()
        d[dead] = fallback
        norms = np.linalg.norm(d, axis=1, keepdims=True)
    return d / norms


# ---------------------------------------------------------------------------
# per-method objective objects
# ---------------------------------------------------------------------------

class SurrogateObjective:
    """Set-index cross-entropy through the client's fixed transition head."""

    def __init__(self, dataset, head, batch_size, l1_weight, rng):
        self.inputs = dataset.inputs
        self.labels = dataset.labels
        self.head = head
        self.l1_weight = l1_weight
        self.stream = BatchStream(dataset.size, batch_size, rng)

    @property
    def steps_per_epoch(self):
        return self.stream.steps_per_epoch

    def next_payload(self):
        return self.stream.next()

    def step_grad(self, params, idx, rng):
        batch = nn.Batch(self.inputs[idx], self.labels[idx])
        return nn.backward(params, batch, head=self.head, l1_weight=self.l1_weight)

    def full_loss(self, params):
        return nn.loss_value(params, nn.Batch(self.inputs, self.labels),
                             head=self.head, l1_weight=self.l1_weight)


class SupervisedObjective:
    """Plain cross-entropy on a labeled fraction of the client's samples."""

    def __init__(self, inputs, labels, batch_size, l1_weight, rng):
        self.inputs = inputs
        self.labels = labels
        self.l1_weight = l1_weight
        self.stream = BatchStream(inputs.shape[0], batch_size, rng)

    @classmethod
    def from_sealed(cls, collection, fraction, batch_size, l1_weight, rng):
        """Reveal ground-truth labels for a fraction of the data through the
        audited gate; the rest of the data is discarded."""
        if not 0.0 < fraction <= 1.0:
            raise ValueError(f"labeled fraction must be in (0, 1], got {fraction}")
        inputs = np.concatenate(collection.sets, axis=0)
        labels = np.concatenate(collection.labels.reveal("supervised-baseline"))
        if fraction < 1.0:
            keep = int(round(fraction * inputs.shape[0]))
            if keep == 0:
                log.warning("client %s: labeled fraction %.4g leaves no samples; "
                            "client will sit out", collection.client_id, fraction)
                inputs = inputs[:0]
                labels = labels[:0]
            else:
                chosen = rng.choice(inputs.shape[0], size=keep, replace=False)
                chosen.sort()
                inputs = inputs[chosen]
                labels = labels[chosen]
        return cls(np.ascontiguousarray(inputs), labels, batch_size, l1_weight, rng)

    @property
    def steps_per_epoch(self):
        return self.stream.steps_per_epoch

    def next_payload(self):
        return self.stream.next()

    def step_grad(self, params, idx, rng):
        batch = nn.Batch(self.inputs[idx], self.labels[idx])
        return nn.backward(params, batch, l1_weight=self.l1_weight)

    def full_loss(self, params):
        if self.inputs.shape[0] == 0:
            return 0.0
        return nn.loss_value(params, nn.Batch(self.inputs, self.labels),
                             l1_weight=self.l1_weight)


class PseudoLabelObjective:
    """Each set's samples inherit the most likely class of its prior row as a
    pseudo label; training uses the confidence-split mixup loss."""

    def __init__(self, collection, used_priors, batch_size, tau, mixup_alpha,
                 mix_weight, l1_weight, rng):
        self.inputs = np.concatenate(collection.sets, axis=0)
        set_pseudo = used_priors.values.argmax(axis=1)
        self.pseudo = np.concatenate(
            [np.full(s.shape[0], set_pseudo[m], dtype=np.int64)
             for m, s in enumerate(collection.sets)])
        self.tau = tau
        self.mixup_alpha = mixup_alpha
        self.mix_weight = mix_weight
        self.l1_weight = l1_weight
        self.stream = BatchStream(self.inputs.shape[0], batch_size, rng)

    @property
    def steps_per_epoch(self):
        return self.stream.steps_per_epoch

    def next_payload(self):
        return self.stream.next()

    def step_grad(self, params, idx, rng):
        return fedpl_loss(params, self.inputs[idx], self.pseudo[idx], self.tau,
                          self.mixup_alpha, self.mix_weight, rng,
                          l1_weight=self.l1_weight)

    def full_loss(self, params):
        """Pseudo-label cross-entropy over all samples (the deterministic part
        of the objective; the mixed term depends on draws)."""
        probs = nn.softmax(nn.forward(params, self.inputs))
        loss = nn.ce_loss(probs, self.pseudo)
        if self.l1_weight:
            loss += self.l1_weight * sum(float(np.abs(w).sum()) for w in params.weights)
        return loss


class ProportionObjective:
    """Sum of per-set proportion risks; each step draws one minibatch per set
    so the model sees roughly one batch worth of samples per step."""

    def __init__(self, collection, used_priors, batch_size, l1_weight, rng):
        self.sets = [np.ascontiguousarray(s) for s in collection.sets]
        self.targets = [used_priors.values[m].copy() for m in range(len(self.sets))]
        per_set = None
        if batch_size is not None:
            per_set = max(1, math.ceil(batch_size / len(self.sets)))
        self.streams = [BatchStream(s.shape[0], per_set, rng) for s in self.sets]
        self.l1_weight = l1_weight

    @property
    def steps_per_epoch(self):
        return max(s.steps_per_epoch for s in self.streams)

    def next_payload(self):
        return [s.next() for s in self.streams]

    def step_grad(self, params, payload, rng):
        loss = 0.0
        parts = []
        for m, idx in enumerate(payload):
            set_loss, set_grads = fedllp_loss(params, self.sets[m][idx], self.targets[m])
            loss += set_loss
            parts.append((1.0, set_grads))
        grads = _combine(parts)
        if self.l1_weight:
            loss += self.l1_weight * sum(float(np.abs(w).sum()) for w in params.weights)
            for i, w in enumerate(params.weights):
                grads.weights[i] = grads.weights[i] + self.l1_weight * np.sign(w)
        return loss, grads

    def full_loss(self, params):
        loss = 0.0
        for x, target in zip(self.sets, self.targets):
            probs = nn.softmax(nn.forward(params, x))
            phat = probs.mean(axis=0)
            loss += -float((target * np.log(np.maximum(phat, 1e-12))).sum())
        if self.l1_weight:
            loss += self.l1_weight * sum(float(np.abs(w).sum()) for w in params.weights)
        return loss


class ProportionVatObjective(ProportionObjective):
    """Proportion risk plus weighted KL consistency under adversarial input
    perturbations, computed on the union of the step's minibatches."""

    def __init__(self, collection, used_priors, batch_size, l1_weight, rng,
                 vat_weight, vat_radius, vat_xi, vat_power_iters):
        super().__init__(collection, used_priors, batch_size, l1_weight, rng)
        self.vat_weight = vat_weight
        self.vat_radius = vat_radius
        self.vat_xi = vat_xi
        self.vat_power_iters = vat_power_iters

    def step_grad(self, params, payload, rng):
        loss, grads = super().step_grad(params, payload, rng)
        x = np.concatenate([self.sets[m][idx] for m, idx in enumerate(payload)], axis=0)
        cons_loss, cons_grads = vat_consistency(
            params, x, self.vat_xi, self.vat_radius, self.vat_power_iters, rng)
        return loss + self.vat_weight * cons_loss, _combine(
            [(1.0, grads), (self.vat_weight, cons_grads)])


def supervised_fraction_objective(collection, fraction, batch_size, l1_weight, rng):
    """The labeled-fraction comparison arm (fraction 1.0 is the fully
    supervised upper bound)."""
    return SupervisedObjective.from_sealed(collection, fraction, batch_size,
                                           l1_weight, rng)


def create_objective(method, collection, used_priors, pi, num_surrogate_classes,
                     config, rng):
    """Instantiate the local objective named by ``method``.

    ``used_priors`` is the prior matrix the method is told (possibly noisy);
    data were generated from the collection's own clean matrix.
    """
    if method == "fedul":
        dataset = build_surrogate_dataset(collection, num_surrogate_classes)
        pi_bar = estimate_surrogate_prior(collection.set_sizes, num_surrogate_classes)
        head = build_transition_matrix(pi, pi_bar, used_priors, num_surrogate_classes)
        return SurrogateObjective(dataset, head, config.batch_size,
                                  config.l1_weight, rng)
    if method == "fedpl":
        return PseudoLabelObjective(collection, used_priors, config.batch_size,
                                    config.confidence_tau, config.mixup_alpha,
                                    config.mix_weight, config.l1_weight, rng)
    if method == "fedllp":
        return ProportionObjective(collection, used_priors, config.batch_size,
                                   config.l1_weight, rng)
    if method == "fedllp_vat":
        return ProportionVatObjective(collection, used_priors, config.batch_size,
                                      config.l1_weight, rng, config.vat_weight,
                                      config.vat_radius, config.vat_xi,
                                      config.vat_power_iters)
    if method == "fedavg_supervised":
        return supervised_fraction_objective(collection, config.labeled_fraction,
                                             config.batch_size, config.l1_weight, rng)
    raise ValueError(f"unknown method {method!r} (expected one of {METHODS})")
