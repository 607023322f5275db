"""Task construction and data sampling.

A task bundles the shared class-conditional generators (synthetic Gaussians
or per-class example pools loaded from files) with the test-time class prior.
Per-client unlabeled sets are drawn as mixtures of these conditionals
according to a prior matrix; the true class of each sample is retained only
inside a sealed side-structure that the training path never reads.
"""

from dataclasses import dataclass, field

import numpy as np

from .priors import ClassPriorMatrix, as_vector, check_prior_matrix


class AllocationError(ValueError):
    """Majority/minority fraction constraints cannot be satisfied."""


class SealedLabels:
    """Ground-truth labels of generated sets, walled off from training.

    Every read goes through :meth:`reveal`, which records the stated purpose,
    so any use of label information is explicit and auditable.
    """

    def __init__(self, arrays):
        self._arrays = [np.ascontiguousarray(a, dtype=np.int64) for a in arrays]
        self.audit = []

    def reveal(self, purpose):
        if not purpose:
            raise ValueError("label access requires a stated purpose")
        self.audit.append(str(purpose))
        return [a.copy() for a in self._arrays]

    def __len__(self):
        return len(self._arrays)


@dataclass
class TaskSpec:
    """Shared class-conditional generators plus the test class prior."""

    kind: str                      # "gaussian" | "pools"
    num_classes: int
    dim: int
    test_prior: np.ndarray
    means: np.ndarray = None       # (K, d), gaussian only
    stds: np.ndarray = None        # (K, d), gaussian only
    pools: list = field(default_factory=list)  # per-class (n_k, d), pools only

    def sample_class(self, label, count, rng):
        if self.kind == "gaussian":
            noise = rng.standard_normal((count, self.dim))
            return self.means[label] + noise * self.stds[label]
        pool = self.pools[label]
        idx = rng.integers(0, pool.shape[0], size=count)
        return pool[idx].astype(np.float64)

    def posterior(self, inputs):
        """Exact class posterior under the task's generative model
        (closed form for the Gaussian family only)."""
        if self.kind != "gaussian":
            raise NotImplementedError("closed-form posterior only for gaussian tasks")
        x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        log_p = np.empty((x.shape[0], self.num_classes))
        for k in range(self.num_classes):
            z = (x - self.means[k]) / self.stds[k]
            log_p[:, k] = (np.log(self.test_prior[k])
                           - 0.5 * (z * z).sum(axis=1)
                           - np.log(self.stds[k]).sum())
        log_p -= log_p.max(axis=1, keepdims=True)
        p = np.exp(log_p)
        return p / p.sum(axis=1, keepdims=True)


@dataclass
class USetCollection:
    client_id: int
    sets: list                     # M_c arrays of shape (n_m, d)
    priors: ClassPriorMatrix
    labels: SealedLabels

    @property
    def set_sizes(self):
        return [s.shape[0] for s in self.sets]


@dataclass
class SurrogateDataset:
    """Pooled samples labeled by 0-based set index."""

    inputs: np.ndarray
    labels: np.ndarray
    offsets: np.ndarray            # set start offsets, length M_c + 1
    num_surrogate_classes: int

    @property
    def size(self):
        return self.inputs.shape[0]


@dataclass
class LabeledTestSet:
    inputs: np.ndarray
    labels: np.ndarray


def _simplex_vertices(num_points):
    """num_points unit vectors in R^(num_points-1), pairwise equidistant."""
    eye = np.eye(num_points)
    centered = eye - eye.mean(axis=0)
    # orthonormal basis of the (num_points-1)-dim span
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    verts = centered @ vt[:num_points - 1].T
    return verts / np.linalg.norm(verts, axis=1, keepdims=True)


def gen_gaussian_task(num_classes, dim, separation, rng=None, test_prior=None):
    """Unit-variance Gaussian class conditionals with means of norm
    ``separation``: scaled simplex vertices when they fit (K <= d + 1),
    otherwise random distinct directions drawn from ``rng``."""
    if num_classes < 2 or dim < 1 or not separation > 0:
        raise ValueError("need num_classes >= 2, dim >= 1, separation > 0")
    if test_prior is None:
        test_prior = np.full(num_classes, 1.0 / num_classes)
    test_prior = as_vector(test_prior)
    if num_classes <= dim + 1:
        verts = _simplex_vertices(num_classes)
        means = np.zeros((num_classes, dim))
        means[:, :num_classes - 1] = verts * separation
    else:
        if rng is None:
            raise ValueError(f"{num_classes} classes in {dim} dims need an rng "
                             "for random mean directions")
        for _ in range(100):
            dirs = rng.standard_normal((num_classes, dim))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            means = dirs * separation
            gaps = np.linalg.norm(means[:, None] - means[None, :], axis=2)
            if gaps[~np.eye(num_classes, dtype=bool)].min() > 0.1 * separation:
                break
        else:
            raise ValueError("could not place distinct class means")
    return TaskSpec(kind="gaussian", num_classes=num_classes, dim=dim,
                    test_prior=test_prior, means=means,
                    stds=np.ones((num_classes, dim)))


def pools_task(pools, test_prior=None):
    """Task backed by per-class example pools (e.g. loaded from IDX files)."""
    pools = [np.ascontiguousarray(p, dtype=np.float64) for p in pools]
    if len(pools) < 2 or any(p.ndim != 2 or p.shape[0] < 1 for p in pools):
        raise ValueError("need >= 2 non-empty 2-d example pools")
    dim = pools[0].shape[1]
    if any(p.shape[1] != dim for p in pools):
        raise ValueError("all pools must share the feature dimension")
    if test_prior is None:
        test_prior = np.full(len(pools), 1.0 / len(pools))
    return TaskSpec(kind="pools", num_classes=len(pools), dim=dim,
                    test_prior=as_vector(test_prior), pools=pools)


def sample_u_sets(task, prior_matrix, sizes, rng, client_id=0):
    """Draw the client's unlabeled sets: each sample's class comes from the
    set's prior row, its features from that class conditional."""
    check_prior_matrix(prior_matrix)
    if prior_matrix.num_classes != task.num_classes:
        raise ValueError("prior matrix class count does not match the task")
    sizes = [int(s) for s in sizes]
    if len(sizes) != prior_matrix.num_sets or any(s < 1 for s in sizes):
        raise ValueError("need one positive size per prior matrix row")
    sets, hidden = [], []
    for m, n in enumerate(sizes):
        row = prior_matrix.values[m] / prior_matrix.values[m].sum()
        classes = rng.choice(task.num_classes, size=n, p=row)
        x = np.empty((n, task.dim))
        for k in np.unique(classes):
            mask = classes == k
            x[mask] = task.sample_class(int(k), int(mask.sum()), rng)
        sets.append(x)
        hidden.append(classes.astype(np.int64))
    return USetCollection(client_id=client_id, sets=sets, priors=prior_matrix,
                          labels=SealedLabels(hidden))


def build_surrogate_dataset(collection, num_surrogate_classes):
    """Concatenate the client's sets and label each sample with its 0-based
    set index; ground-truth classes are not consulted."""
    m_c = len(collection.sets)
    if num_surrogate_classes < m_c:
        raise ValueError("surrogate class count smaller than the client's set count")
    inputs = np.concatenate(collection.sets, axis=0)
    labels = np.concatenate([np.full(s.shape[0], m, dtype=np.int64)
                             for m, s in enumerate(collection.sets)])
    offsets = np.concatenate([[0], np.cumsum([s.shape[0] for s in collection.sets])])
    return SurrogateDataset(inputs=np.ascontiguousarray(inputs),
                            labels=labels,
                            offsets=offsets.astype(np.int64),
                            num_surrogate_classes=int(num_surrogate_classes))


def allocate_clients_noniid(num_classes, num_clients, rng, majority_per_client=2,
                            majority_range=(0.15, 0.25), minority_cap=0.08):
    """Per-client class-fraction profiles with round-robin majority classes.

    Raw majority fractions are drawn in ``majority_range`` and raw minority
    fractions below ``minority_cap``; each profile is then renormalized to
    sum 1 (which preserves every majority/minority ratio). Test sampling
    stays uniform; only training data shift.
    """
    if num_classes < majority_per_client + 1:
        raise AllocationError("need at least one minority class")
    if not 0 < majority_range[0] <= majority_range[1] < 1 or not 0 < minority_cap < 1:
        raise AllocationError(f"fraction constraints cannot sum to 1: majority "
                              f"range {majority_range}, minority cap {minority_cap}")
    n_min = num_classes - majority_per_client
    profiles = np.zeros((num_clients, num_classes))
    for c in range(num_clients):
        majors = [(c * majority_per_client + j) % num_classes
                  for j in range(majority_per_client)]
        minors = [k for k in range(num_classes) if k not in majors]
        profiles[c, majors] = rng.uniform(*majority_range, size=majority_per_client)
        profiles[c, minors] = rng.uniform(0.0, minority_cap, size=n_min)
        profiles[c] /= profiles[c].sum()
    return profiles


def sample_test_set(task, pi, count, rng):
    pi = as_vector(pi)
    if count < 1:
        raise ValueError(f"test set size must be >= 1, got {count}")
    if pi.shape != (task.num_classes,):
        raise ValueError("test prior length does not match the task")
    labels = rng.choice(task.num_classes, size=count, p=pi).astype(np.int64)
    x = np.empty((count, task.dim))
    for k in np.unique(labels):
        mask = labels == k
        x[mask] = task.sample_class(int(k), int(mask.sum()), rng)
    return LabeledTestSet(inputs=np.ascontiguousarray(x), labels=labels)


def bayes_error_estimate(task, pi, count, rng):
    """Monte Carlo error of the exact-posterior classifier; handy as an
    independent yardstick next to quadrature results."""
    test = sample_test_set(task, pi, count, rng)
    pred = task.posterior(test.inputs).argmax(axis=1)
    return float((pred != test.labels).mean())
