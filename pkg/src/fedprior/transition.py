"""The fixed transition head that converts a class-posterior estimate into a
set-membership posterior, together with the brute-force Bayes oracle that
certifies it on discrete instances and the constrained least-squares inverse
that witnesses its injectivity.

Entry (m, k) of the matrix is ``pi_bar[m] * prior_matrix[m, k] / pi[k]``;
applying the head means multiplying by this matrix and renormalizing by the
sum of all entries. Rows for set indices a client does not have are exact
zeros.
"""

from dataclasses import dataclass

import numpy as np

from .priors import (PriorMatrixError, RANK_TOL, as_vector,
                     check_prior_matrix, min_singular_value,
                     sample_prior_matrix)

# tolerance ladder: brute-force oracle agreement / least-squares inversion
ORACLE_TOL = 1e-12
INVERSE_TOL = 1e-8


class SingularPriorError(ValueError):
    """The test prior has a zero entry, so the head is undefined."""


class NotInImageError(ValueError):
    """The requested vector is not a surrogate posterior for this head."""


@dataclass
class TransitionMatrix:
    values: np.ndarray        # (M, K), rows >= num_active are exact zero
    pi: np.ndarray            # test prior (K,)
    pi_bar: np.ndarray        # surrogate prior (M,), padded with zeros
    num_active: int           # the client's own set count M_c

    @property
    def column_sums(self):
        return self.values.sum(axis=0)


def build_transition_matrix(pi, pi_bar, prior_matrix, num_surrogate_classes):
    """Assemble the head from the test prior, the surrogate prior, and the
    client's prior matrix, padding zero rows up to ``num_surrogate_classes``."""
    pi = as_vector(pi)
    pi_bar = as_vector(pi_bar)
    check_prior_matrix(prior_matrix)
    m_c, k = prior_matrix.values.shape
    m_total = int(num_surrogate_classes)
    if m_total < m_c:
        raise ValueError(f"surrogate class count {m_total} smaller than set count {m_c}")
    if pi.shape != (k,):
        raise ValueError(f"test prior length {pi.shape} != class count {k}")
    if (pi <= 0).any():
        raise SingularPriorError("test prior must be strictly positive")
    if pi_bar.shape == (m_c,) and m_total > m_c:
        pi_bar = np.concatenate([pi_bar, np.zeros(m_total - m_c)])
    if pi_bar.shape != (m_total,):
        raise ValueError(f"surrogate prior length {pi_bar.shape} != {m_total}")
    if (pi_bar[:m_c] <= 0).any():
        raise ValueError("surrogate prior must be positive on the client's sets")
    if (pi_bar[m_c:] != 0).any():
        raise ValueError("padded surrogate prior entries must be exactly zero")

    values = np.zeros((m_total, k))
    # divide by pi last so that the identity configuration yields exact ones
    values[:m_c] = (pi_bar[:m_c, None] * prior_matrix.values) / pi[None, :]
    if min_singular_value(values[:m_c]) <= RANK_TOL:
        raise PriorMatrixError("transition matrix lost column rank")
    return TransitionMatrix(values=values, pi=pi.copy(), pi_bar=pi_bar.copy(),
                            num_active=m_c)


def apply_transition(tmat, eta):
    """Map a class-probability vector through the head: multiply and
    renormalize by the sum of all entries."""
    eta = as_vector(eta)
    if eta.shape != (tmat.values.shape[1],):
        raise ValueError(f"posterior length {eta.shape} does not match head")
    q = tmat.values @ eta
    total = q.sum()
    if not total > 0:
        raise ArithmeticError("transition output summed to zero; head invariants broken")
    return q / total


def recover_eta(tmat, eta_bar):
    """Invert the head by least squares on the stacked system
    [T, -eta_bar; 1^T, 0] [eta; s] = [0; 1], where s is the lost
    normalization scale. Raises when the input is not in the head's image."""
    eta_bar = as_vector(eta_bar)
    m, k = tmat.values.shape
    if eta_bar.shape != (m,):
        raise ValueError("surrogate posterior length does not match head")
    a = np.zeros((m + 1, k + 1))
    a[:m, :k] = tmat.values
    a[:m, k] = -eta_bar
    a[m, :k] = 1.0
    b = np.zeros(m + 1)
    b[m] = 1.0
    sol = np.linalg.lstsq(a, b, rcond=None)[0]
    eta = sol[:k]
    residual = np.abs(apply_transition(tmat, eta) - eta_bar).max()
    if residual > INVERSE_TOL:
        raise NotInImageError(
            f"no class posterior maps to this vector (residual {residual:.3e})")
    return eta


def random_discrete_instance(domain_size, num_classes, num_surrogate, rng):
    """A random finite-domain problem: test prior, per-set prior matrix, and
    per-class conditional pmfs over ``domain_size`` points."""
    pi = rng.uniform(0.2, 1.0, num_classes)
    pi /= pi.sum()
    prior_matrix = sample_prior_matrix(num_classes, num_surrogate, rng)
    cond = rng.uniform(0.05, 1.0, size=(num_classes, domain_size))
    cond /= cond.sum(axis=1, keepdims=True)
    return pi, prior_matrix, cond


def bayes_oracle_discrete(domain_size, num_classes, num_surrogate, pi,
                          prior_matrix, class_conditionals, rng=None,
                          pi_bar=None):
    """Exhaustively invert the joint distribution on a finite domain and
    compare the surrogate posterior against the head applied to the class
    posterior; returns the maximum absolute discrepancy over the domain.

    ``pi_bar`` defaults to a random positive set prior drawn from ``rng``
    (the identity holds for any valid choice).
    """
    pi = as_vector(pi)
    cond = np.asarray(class_conditionals, dtype=np.float64)
    if cond.shape != (num_classes, domain_size):
        raise ValueError("class conditionals must be (num_classes, domain_size)")
    if (cond < 0).any() or not np.allclose(cond.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError("class conditionals must be valid pmfs")
    m_c = prior_matrix.num_sets
    if pi_bar is None:
        if rng is None:
            raise ValueError("need rng when pi_bar is not given")
        raw = rng.uniform(0.2, 1.0, m_c)
        pi_bar = raw / raw.sum()
    pi_bar = as_vector(pi_bar)

    tmat = build_transition_matrix(pi, pi_bar, prior_matrix, num_surrogate)
    set_cond = prior_matrix.values @ cond          # (M_c, D): p_m(x)
    worst = 0.0
    for x in range(domain_size):
        marginal = float(pi @ cond[:, x])
        if marginal == 0.0:
            continue  # posterior undefined at never-observed points
        eta = pi * cond[:, x] / marginal
        joint_bar = pi_bar[:m_c] * set_cond[:, x]
        denom = joint_bar.sum()
        if denom == 0.0:
            continue
        eta_bar = np.zeros(num_surrogate)
        eta_bar[:m_c] = joint_bar / denom
        worst = max(worst, float(np.abs(eta_bar - apply_transition(tmat, eta)).max()))
    return worst
