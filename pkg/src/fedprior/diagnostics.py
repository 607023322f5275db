"""Self-contained oracle suites: brute-force verification of the transition
head on discrete instances, inversion round-trips, and finite-difference
gradient checks across objectives. The CLI `oracle` subcommand and the
acceptance tests both run these."""

import numpy as np

from . import nn
from .objectives import fedllp_loss, fedpl_loss
from .priors import sample_prior_matrix
from .transition import (apply_transition, bayes_oracle_discrete,
                         build_transition_matrix, random_discrete_instance,
                         recover_eta)


def bayes_suite(trials=100, seed=0):
    """Max discrepancy between the exhaustive Bayes inversion and the head,
    over random discrete instances (domain <= 10, K in 2..5, M in K..8)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        k = int(rng.integers(2, 6))
        m = int(rng.integers(k, 9))
        domain = int(rng.integers(max(2, k), 11))
        pi, prior_matrix, cond = random_discrete_instance(domain, k, m, rng)
        worst = max(worst, bayes_oracle_discrete(domain, k, m, pi, prior_matrix,
                                                 cond, rng=rng))
    return worst


def _random_simplex(k, rng):
    raw = rng.uniform(0.05, 1.0, k)
    return raw / raw.sum()


def injectivity_suite(trials=1000, seed=0):
    """Round-trip residual of recover_eta(apply_transition(eta)) over random
    heads plus a distinctness check on perturbed posterior pairs.

    Returns (max round-trip error, min image gap over pairs with
    input gap > 1e-3)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    min_gap = np.inf
    for _ in range(trials):
        k = int(rng.integers(2, 6))
        m_c = int(rng.integers(k, 9))
        m = m_c + int(rng.integers(0, 3))
        pi = _random_simplex(k, rng)
        pi_bar = np.zeros(m)
        pi_bar[:m_c] = _random_simplex(m_c, rng)
        mat = sample_prior_matrix(k, m_c, rng)
        tmat = build_transition_matrix(pi, pi_bar, mat, m)

        eta = _random_simplex(k, rng)
        back = recover_eta(tmat, apply_transition(tmat, eta))
        worst = max(worst, float(np.abs(back - eta).max()))

        other = _random_simplex(k, rng)
        if np.abs(other - eta).max() > 1e-3:
            gap = np.abs(apply_transition(tmat, other)
                         - apply_transition(tmat, eta)).max()
            min_gap = min(min_gap, float(gap))
    return worst, min_gap


def _random_model(rng, in_dim=None, out_dim=None, hidden=None):
    in_dim = in_dim or int(rng.integers(2, 5))
    out_dim = out_dim or int(rng.integers(2, 5))
    hidden = hidden if hidden is not None else [int(rng.integers(3, 7))]
    return nn.init_params([in_dim, *hidden, out_dim], rng)


def gradcheck_suite(trials=50, seed=0, fd_eps=1e-5):
    """Max relative error of analytic gradients vs central differences across
    random models, with and without transition heads, plus pseudo-label and
    proportion objectives."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(trials):
        k = int(rng.integers(2, 5))
        params = _random_model(rng, out_dim=k)
        n = int(rng.integers(3, 8))
        x = rng.standard_normal((n, params.in_dim))
        kind = trial % 4
        if kind == 0:
            labels = rng.integers(0, k, n)
            l1 = float(rng.choice([0.0, 1e-3]))
            err = nn.grad_check(params, nn.Batch(x, labels), l1_weight=l1,
                                fd_eps=fd_eps)
        elif kind == 1:
            m = k + int(rng.integers(0, 3))
            pi = _random_simplex(k, rng)
            pi_bar = np.zeros(m)
            pi_bar[:k] = _random_simplex(k, rng)
            head = build_transition_matrix(pi, pi_bar, sample_prior_matrix(k, k, rng), m)
            labels = rng.integers(0, k, n)
            err = nn.grad_check(params, nn.Batch(x, labels), head=head,
                                l1_weight=float(rng.choice([0.0, 1e-3])),
                                fd_eps=fd_eps)
        elif kind == 2:
            target = _random_simplex(k, rng)
            _, grads = fedllp_loss(params, x, target)
            err = nn.fd_max_rel_error(
                params.copy(), lambda p: fedllp_loss(p, x, target)[0],
                grads, fd_eps)
        else:
            labels = rng.integers(0, k, n)
            # split the batch at the widest confidence gap so the threshold
            # assignment cannot flip under the finite-difference perturbation
            conf = np.sort(nn.softmax(nn.forward(params, x)).max(axis=1))
            gaps = conf[1:] - conf[:-1]
            j = int(np.argmax(gaps))
            tau = 0.0 if gaps[j] < 1e-4 else float((conf[j] + conf[j + 1]) / 2)
            draws = int(rng.integers(0, 2 ** 31))

            def loss_fn(p, _s=draws, _t=tau):
                return fedpl_loss(p, x, labels, _t, 0.75, 0.3,
                                  np.random.default_rng(_s))[0]

            _, grads = fedpl_loss(params, x, labels, tau, 0.75, 0.3,
                                  np.random.default_rng(draws))
            err = nn.fd_max_rel_error(params.copy(), loss_fn, grads, fd_eps)
        worst = max(worst, err)
    return worst
