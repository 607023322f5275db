"""The federated orchestrator: per-round client updates against a broadcast
global model, delta aggregation on the server, and the seeded end-to-end
training loop.

Aggregation averages the client deltas and applies them with the global
step size (step size 1 reproduces plain federated averaging). Clients are
always summed in client-id order, so results do not depend on scheduling.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .datagen import (allocate_clients_noniid, gen_gaussian_task, pools_task,
                      sample_test_set, sample_u_sets)
from .idx import load_idx_dataset
from .objectives import SurrogateObjective, create_objective
from .priors import (PriorVector, perturb_priors, reweight_columns,
                     sample_prior_matrix)


class DivergenceError(RuntimeError):
    """A client's local loss or gradient became non-finite."""

    def __init__(self, client_id, round_index, step_index, detail):
        super().__init__(f"client {client_id} diverged at round {round_index} "
                         f"step {step_index}: {detail}")
        self.client_id = client_id
        self.round_index = round_index
        self.step_index = step_index


@dataclass
class ClientState:
    client_id: int
    objective: object
    adam: nn.AdamState
    rng: np.random.Generator
    steps_per_round: int


@dataclass
class ServerState:
    params: nn.ModelParams
    round_index: int
    global_lr: float
    method: str


@dataclass
class RoundMetrics:
    round_index: int
    test_error: float
    train_loss: float
    wall_ms: float = 0.0
    per_client_errors: list = None


@dataclass
class RunResult:
    seed: int
    metrics: list
    final_error: float
    client_info: list = field(default_factory=list)
    param_history: list = field(default_factory=list)


def predict(params, inputs):
    """Most likely class per row; ties go to the smallest index."""
    return nn.forward(params, inputs).argmax(axis=1)


def error_rate(params, test_set):
    return float((predict(params, test_set.inputs) != test_set.labels).mean())


def param_diff(a, b):
    return nn.ModelParams([wa - wb for wa, wb in zip(a.weights, b.weights)],
                          [ba - bb for ba, bb in zip(a.biases, b.biases)])


def param_add(base, delta, coef=1.0):
    return nn.ModelParams([w + coef * d for w, d in zip(base.weights, delta.weights)],
                          [b + coef * d for b, d in zip(base.biases, delta.biases)])


@dataclass
class _Hyper:
    # minimal attribute bag accepted by create_objective
    batch_size: int
    l1_weight: float


def client_init(collection, pi, num_surrogate_classes, model, *, batch_size,
                epochs, l1_weight, rng, used_priors=None):
    """Initialize a surrogate-task client: build its set-index dataset, its
    set-membership prior estimate, and its fixed transition head. Ground-truth
    labels are never consulted."""
    priors = collection.priors if used_priors is None else used_priors
    objective = create_objective("fedul", collection, priors, pi,
                                 num_surrogate_classes, _Hyper(batch_size, l1_weight),
                                 rng)
    return ClientState(client_id=collection.client_id, objective=objective,
                       adam=nn.init_adam_state(model),
                       rng=rng,
                       steps_per_round=epochs * objective.steps_per_epoch)


def client_update(state, server_params, lr, round_index=0, num_steps=None):
    """Copy the broadcast model, take the client's local optimizer steps, and
    return the resulting parameter delta. The server model is untouched."""
    steps = state.steps_per_round if num_steps is None else num_steps
    params = server_params.copy()
    for step in range(steps):
        payload = state.objective.next_payload()
        loss, grads = state.objective.step_grad(params, payload, state.rng)
        if not np.isfinite(loss):
            raise DivergenceError(state.client_id, round_index, step,
                                  f"loss={loss!r}")
        try:
            params, state.adam = nn.adam_step(params, grads, state.adam, lr)
        except nn.NonFiniteGradientError as exc:
            raise DivergenceError(state.client_id, round_index, step, str(exc)) from exc
    return param_diff(params, server_params)


def server_execute(server, deltas):
    """Fold the round's client deltas into the global model (mean of deltas
    scaled by the global step size) and advance the round counter."""
    if not deltas:
        raise ValueError("server received no client updates")
    ordered = sorted(deltas, key=lambda pair: pair[0])
    acc = ordered[0][1]
    total_w = [w.copy() for w in acc.weights]
    total_b = [b.copy() for b in acc.biases]
    for _, delta in ordered[1:]:
        for i, w in enumerate(delta.weights):
            total_w[i] += w
        for i, b in enumerate(delta.biases):
            total_b[i] += b
    coef = server.global_lr / len(ordered)
    params = nn.ModelParams(
        [w + coef * dw for w, dw in zip(server.params.weights, total_w)],
        [b + coef * db for b, db in zip(server.params.biases, total_b)])
    return ServerState(params=params, round_index=server.round_index + 1,
                       global_lr=server.global_lr, method=server.method)


def build_task(config, rng):
    if config.task["kind"] == "gaussian":
        t = config.task
        prior = None if t["test_prior"] == "uniform" else np.asarray(t["test_prior"])
        return gen_gaussian_task(t["classes"], t["dim"], t["separation"],
                                 rng=rng, test_prior=prior)
    t = config.task
    pools = load_idx_dataset(t["images"], t["labels"], num_classes=t.get("classes"))
    prior = None if t["test_prior"] == "uniform" else np.asarray(t["test_prior"])
    return pools_task(pools, test_prior=prior)


def _client_set_counts(config):
    sets = config.sets_per_client
    if isinstance(sets, int):
        return [sets] * config.clients
    return list(sets)


def _set_sizes(config, num_sets):
    size = config.set_size
    if isinstance(size, int):
        return [size] * num_sets
    if len(size) != num_sets:
        raise ValueError("per-set size list length must equal the set count")
    return list(size)


def run_training(config, seed, record_params=False):
    """One seeded federated training run: generate priors and data, initialize
    clients, iterate rounds, and evaluate the global model after each round
    (round 0 is the untrained model)."""
    root = np.random.SeedSequence(int(seed))
    alloc_ss, data_ss, noise_ss, init_ss, test_ss, train_ss = root.spawn(6)
    task_rng = np.random.default_rng(np.random.SeedSequence(config.task_seed))
    task = build_task(config, task_rng)
    k = task.num_classes
    pi = PriorVector(task.test_prior, role="test")

    set_counts = _client_set_counts(config)
    num_surrogate = max(set_counts)

    profiles = None
    if config.distribution == "noniid":
        profiles = allocate_clients_noniid(
            k, config.clients, np.random.default_rng(alloc_ss),
            majority_per_client=config.majority_per_client,
            majority_range=tuple(config.majority_fraction_range),
            minority_cap=config.minority_fraction_cap)

    data_rngs = [np.random.default_rng(s) for s in data_ss.spawn(config.clients)]
    noise_rngs = [np.random.default_rng(s) for s in noise_ss.spawn(config.clients)]
    train_rngs = [np.random.default_rng(s) for s in train_ss.spawn(config.clients)]
    test_rng = np.random.default_rng(test_ss)
    init_rng = np.random.default_rng(init_ss)

    collections, used_priors = [], []
    for c in range(config.clients):
        mat = sample_prior_matrix(k, set_counts[c], data_rngs[c],
                                  low=config.prior_low, high=config.prior_high)
        if profiles is not None:
            mat = reweight_columns(mat, profiles[c])
        sizes = _set_sizes(config, set_counts[c])
        collections.append(sample_u_sets(task, mat, sizes, data_rngs[c], client_id=c))
        used = mat
        if config.prior_noise > 0:
            used = perturb_priors(mat, config.prior_noise, noise_rngs[c],
                                  low=config.prior_low, high=config.prior_high)
        used_priors.append(used)

    test = sample_test_set(task, pi, config.test_size, test_rng)
    per_client_tests = None
    if config.per_client_eval:
        rngs = [np.random.default_rng(s) for s in test_ss.spawn(config.clients)]
        per_client_tests = [sample_test_set(task, pi, config.test_size, r)
                            for r in rngs]

    model = nn.init_params([task.dim, *config.hidden_layers, k], init_rng)
    clients = []
    for c in range(config.clients):
        objective = create_objective(config.method, collections[c], used_priors[c],
                                     pi, num_surrogate, config, train_rngs[c])
        clients.append(ClientState(
            client_id=c, objective=objective, adam=nn.init_adam_state(model),
            rng=train_rngs[c],
            steps_per_round=config.epochs * objective.steps_per_epoch))

    server = ServerState(params=model, round_index=0,
                         global_lr=config.global_lr, method=config.method)

    def observe(round_index, wall_ms):
        train_loss = float(np.mean([c.objective.full_loss(server.params)
                                    for c in clients]))
        entry = RoundMetrics(
            round_index=round_index,
            test_error=error_rate(server.params, test),
            train_loss=train_loss,
            wall_ms=wall_ms)
        if per_client_tests is not None:
            entry.per_client_errors = [error_rate(server.params, t)
                                       for t in per_client_tests]
        return entry

    metrics = [observe(0, 0.0)]
    history = [server.params.copy()] if record_params else []
    for round_index in range(1, config.rounds + 1):
        started = time.perf_counter()
        deltas = [(client.client_id,
                   client_update(client, server.params, config.local_lr,
                                 round_index=round_index))
                  for client in clients]
        server = server_execute(server, deltas)
        metrics.append(observe(round_index,
                               (time.perf_counter() - started) * 1e3))
        if record_params:
            history.append(server.params.copy())

    client_info = []
    for c, client in enumerate(clients):
        info = {"client": c, "num_sets": set_counts[c],
                "set_sizes": _set_sizes(config, set_counts[c])}
        if isinstance(client.objective, SurrogateObjective):
            head = client.objective.head
            info["transition"] = head.values.tolist()
            info["surrogate_prior"] = head.pi_bar.tolist()
            info["prior_matrix"] = used_priors[c].values.tolist()
        client_info.append(info)

    return RunResult(seed=seed, metrics=metrics,
                     final_error=metrics[-1].test_error,
                     client_info=client_info, param_history=history)
