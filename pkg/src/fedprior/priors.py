"""Class-prior objects: the test prior, per-client per-set prior matrices,
and the surrogate (set-membership) prior, plus sampling, validation, and
noise perturbation.

A prior matrix holds one row per unlabeled set; entry (m, k) is the
probability that a sample of set m belongs to class k. Rows sum to one and
the matrix must have full column rank, which is what makes the set-index
surrogate task informative about the original classes.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

ROW_SUM_TOL = 1e-10
# smallest singular value accepted as "full column rank"
RANK_TOL = 1e-8
DEFAULT_PRIOR_RANGE = (0.1, 0.9)


class PriorMatrixError(ValueError):
    """A prior matrix violates its invariants or could not be generated."""


@dataclass
class ClassPriorMatrix:
    values: np.ndarray  # (num_sets, num_classes)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise PriorMatrixError("prior matrix must be 2-d")

    @property
    def num_sets(self):
        return self.values.shape[0]

    @property
    def num_classes(self):
        return self.values.shape[1]


@dataclass
class PriorVector:
    """A class prior (role "test") or set-membership prior (role "surrogate")."""

    values: np.ndarray
    role: str = "test"

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise PriorMatrixError("prior vector must be 1-d")
        if self.role not in ("test", "surrogate"):
            raise PriorMatrixError(f"unknown prior role {self.role!r}")
        if (self.values < 0).any() or abs(self.values.sum() - 1.0) > ROW_SUM_TOL:
            raise PriorMatrixError("prior vector entries must be >= 0 and sum to 1")


def as_vector(v):
    return v.values if isinstance(v, PriorVector) else np.ascontiguousarray(v, dtype=np.float64)


def min_singular_value(mat):
    rows = np.asarray(mat, dtype=np.float64)
    sums = rows.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        normalized = np.where(sums > 0, rows / sums, rows)
    return float(np.linalg.svd(normalized, compute_uv=False)[-1])


def validate_prior_matrix(mat):
    """Return the list of violated invariants (empty when valid)."""
    v = mat.values
    problems = []
    if not np.isfinite(v).all():
        problems.append("non-finite entries")
        return problems
    if (v < 0).any() or (v > 1).any():
        problems.append("entries outside [0, 1]")
    bad_rows = np.flatnonzero(np.abs(v.sum(axis=1) - 1.0) > ROW_SUM_TOL)
    if bad_rows.size:
        problems.append(f"row sums differ from 1 at rows {bad_rows.tolist()}")
    if mat.num_sets < mat.num_classes:
        problems.append(f"fewer sets ({mat.num_sets}) than classes ({mat.num_classes})")
    elif min_singular_value(v) <= RANK_TOL:
        problems.append("column rank below the number of classes")
    if mat.num_classes >= 2 and mat.num_sets >= 2:
        if all(np.array_equal(v[0], v[m]) for m in range(1, mat.num_sets)):
            problems.append("all rows identical")
    return problems


def check_prior_matrix(mat):
    problems = validate_prior_matrix(mat)
    if problems:
        raise PriorMatrixError("; ".join(problems))
    return mat


def sample_prior_matrix(num_classes, num_sets, rng, low=DEFAULT_PRIOR_RANGE[0],
                        high=DEFAULT_PRIOR_RANGE[1], max_tries=100):
    """Draw entries uniformly from [low, high], normalize each row, and
    resample (bounded) until the full-column-rank check passes."""
    if num_sets < num_classes:
        raise PriorMatrixError(f"need at least as many sets ({num_sets}) as "
                               f"classes ({num_classes})")
    if not (0.0 < low < high < 1.0):
        raise PriorMatrixError(f"need 0 < low < high < 1, got ({low}, {high})")
    for _ in range(max_tries):
        raw = rng.uniform(low, high, size=(num_sets, num_classes))
        mat = ClassPriorMatrix(raw / raw.sum(axis=1, keepdims=True))
        if not validate_prior_matrix(mat):
            return mat
    raise PriorMatrixError(
        f"no full-rank prior matrix in {max_tries} draws for "
        f"{num_sets} sets x {num_classes} classes")


def estimate_surrogate_prior(set_sizes, num_surrogate_classes):
    """Set-membership prior from set sizes: entry m is n_m / sum(n), computed
    in rational arithmetic; entries past the client's set count are exact 0."""
    sizes = [int(s) for s in set_sizes]
    if not sizes:
        raise ValueError("need at least one set")
    if any(s < 1 for s in sizes):
        raise ValueError(f"set sizes must be >= 1, got {sizes}")
    if num_surrogate_classes < len(sizes):
        raise ValueError("surrogate class count smaller than the number of sets")
    total = sum(sizes)
    fractions = [Fraction(s, total) for s in sizes]
    assert sum(fractions) == 1
    out = np.zeros(num_surrogate_classes)
    out[:len(sizes)] = [float(f) for f in fractions]
    return PriorVector(out, role="surrogate")


def perturb_priors(mat, eps, rng, low=DEFAULT_PRIOR_RANGE[0],
                   high=DEFAULT_PRIOR_RANGE[1]):
    """Multiply each entry by (2*gamma - 1)*eps + 1 with gamma ~ Uniform[0, 1],
    clip back into [low, high], renormalize rows, and revalidate.

    eps == 0 is the identity (the clean setting)."""
    if eps < 0:
        raise ValueError(f"noise level must be >= 0, got {eps}")
    if eps == 0:
        return mat
    gamma = rng.uniform(0.0, 1.0, size=mat.values.shape)
    noisy = mat.values * ((2.0 * gamma - 1.0) * eps + 1.0)
    noisy = np.clip(noisy, low, high)
    noisy /= noisy.sum(axis=1, keepdims=True)
    out = ClassPriorMatrix(noisy)
    problems = validate_prior_matrix(out)
    if problems:
        raise PriorMatrixError("perturbed matrix invalid: " + "; ".join(problems))
    return out


def reweight_columns(mat, class_weights):
    """Tilt each row toward a per-class weight profile and renormalize;
    used to realize shifted client marginals."""
    w = np.asarray(class_weights, dtype=np.float64)
    if w.shape != (mat.num_classes,):
        raise ValueError("class weight profile length must match class count")
    if (w < 0).any() or w.sum() <= 0:
        raise ValueError("class weights must be nonnegative with positive sum")
    tilted = mat.values * w[None, :]
    tilted /= tilted.sum(axis=1, keepdims=True)
    return check_prior_matrix(ClassPriorMatrix(tilted))


def uniform_prior(num_classes):
    return PriorVector(np.full(num_classes, 1.0 / num_classes), role="test")
