"""Declarative experiment configuration: JSON in, a validated config out.

Unknown keys are hard errors (no silent typos) and every complaint carries
a JSON-pointer-style path. Defaults mirror the standard experimental setup:
5 clients, 100 rounds, 1 local epoch, batch 128, Adam learning rate 1e-4.
"""

import json
from dataclasses import dataclass, field

from .objectives import METHODS


class ConfigError(ValueError):
    def __init__(self, pointer, message):
        super().__init__(f"{pointer}: {message}")
        self.pointer = pointer


_TASK_KEYS_GAUSSIAN = {"kind", "classes", "dim", "separation", "test_prior"}
_TASK_KEYS_IDX = {"kind", "images", "labels", "classes", "test_prior"}

_TOP_DEFAULTS = {
    "clients": 5,
    "set_size": 400,
    "distribution": "iid",
    "majority_per_client": 2,
    "majority_fraction_range": [0.15, 0.25],
    "minority_fraction_cap": 0.08,
    "method": "fedul",
    "labeled_fraction": 0.1,
    "rounds": 100,
    "epochs": 1,
    "batch_size": 128,
    "local_lr": 1e-4,
    "global_lr": 1.0,
    "l1_weight": 0.0,
    "prior_noise": 0.0,
    "prior_low": 0.1,
    "prior_high": 0.9,
    "hidden_layers": [32, 32],
    "test_size": 4000,
    "per_client_eval": False,
    "task_seed": 0,
    "seeds": [1, 2, 3],
    "mixup_alpha": 0.75,
    "mix_weight": 0.3,
    "confidence_tau": 0.4,
    "vat_weight": 5e-4,
    "vat_radius": 1e-2,
    "vat_xi": 1e-6,
    "vat_power_iters": 1,
}

_REQUIRED = ("task", "sets_per_client")
_KNOWN_TOP = set(_TOP_DEFAULTS) | set(_REQUIRED) | {"sweep"}


@dataclass
class ExperimentConfig:
    task: dict
    sets_per_client: object          # int or per-client list
    clients: int = 5
    set_size: object = 400           # int or per-set list
    distribution: str = "iid"
    majority_per_client: int = 2
    majority_fraction_range: list = field(default_factory=lambda: [0.15, 0.25])
    minority_fraction_cap: float = 0.08
    method: str = "fedul"
    labeled_fraction: float = 0.1
    rounds: int = 100
    epochs: int = 1
    batch_size: object = 128         # int or None for full batch
    local_lr: float = 1e-4
    global_lr: float = 1.0
    l1_weight: float = 0.0
    prior_noise: float = 0.0
    prior_low: float = 0.1
    prior_high: float = 0.9
    hidden_layers: list = field(default_factory=lambda: [32, 32])
    test_size: int = 4000
    per_client_eval: bool = False
    task_seed: int = 0
    seeds: list = field(default_factory=lambda: [1, 2, 3])
    mixup_alpha: float = 0.75
    mix_weight: float = 0.3
    confidence_tau: float = 0.4
    vat_weight: float = 5e-4
    vat_radius: float = 1e-2
    vat_xi: float = 1e-6
    vat_power_iters: int = 1
    sweep: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def echo(self):
        """The fully defaulted configuration as plain JSON data."""
        data = {k: getattr(self, k) for k in _KNOWN_TOP if k != "sweep"}
        if self.sweep:
            data["sweep"] = self.sweep
        return data


def _expect(cond, pointer, message):
    if not cond:
        raise ConfigError(pointer, message)


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x):
    return (_is_int(x) or isinstance(x, float)) and not isinstance(x, bool)


def _validate_task(task):
    _expect(isinstance(task, dict), "/task", "must be an object")
    kind = task.get("kind")
    _expect(kind in ("gaussian", "idx"), "/task/kind",
            f"must be 'gaussian' or 'idx', got {kind!r}")
    known = _TASK_KEYS_GAUSSIAN if kind == "gaussian" else _TASK_KEYS_IDX
    for key in task:
        _expect(key in known, f"/task/{key}", "unknown key")
    out = dict(task)
    out.setdefault("test_prior", "uniform")
    tp = out["test_prior"]
    if tp != "uniform":
        _expect(isinstance(tp, list) and all(_is_num(v) for v in tp),
                "/task/test_prior", "must be 'uniform' or a list of numbers")
    if kind == "gaussian":
        for key in ("classes", "dim", "separation"):
            _expect(key in out, f"/task/{key}", "required for gaussian tasks")
        _expect(_is_int(out["classes"]) and out["classes"] >= 2,
                "/task/classes", "must be an integer >= 2")
        _expect(_is_int(out["dim"]) and out["dim"] >= 1,
                "/task/dim", "must be an integer >= 1")
        _expect(_is_num(out["separation"]) and out["separation"] > 0,
                "/task/separation", "must be > 0")
    else:
        for key in ("images", "labels"):
            _expect(isinstance(out.get(key), str), f"/task/{key}",
                    "required path for idx tasks")
        if "classes" in out:
            _expect(_is_int(out["classes"]) and out["classes"] >= 2,
                    "/task/classes", "must be an integer >= 2")
    return out


def validate_config(data):
    """Check a parsed JSON object and return a fully defaulted config."""
    _expect(isinstance(data, dict), "", "config must be a JSON object")
    for key in data:
        _expect(key in _KNOWN_TOP, f"/{key}", "unknown key")
    _expect("task" in data, "/task", "task required")
    merged = {**_TOP_DEFAULTS, **data}
    merged["task"] = _validate_task(data["task"])

    _expect("sets_per_client" in data, "/sets_per_client", "required")
    _expect(_is_int(merged["clients"]) and merged["clients"] >= 1,
            "/clients", "must be an integer >= 1")

    sets = merged["sets_per_client"]
    if _is_int(sets):
        _expect(sets >= 1, "/sets_per_client", "must be >= 1")
        set_counts = [sets] * merged["clients"]
    else:
        _expect(isinstance(sets, list) and all(_is_int(s) and s >= 1 for s in sets),
                "/sets_per_client", "must be an int or list of ints >= 1")
        _expect(len(sets) == merged["clients"], "/sets_per_client",
                f"need one entry per client ({merged['clients']})")
        set_counts = list(sets)

    size = merged["set_size"]
    if _is_int(size):
        _expect(size >= 1, "/set_size", "must be >= 1")
    else:
        _expect(isinstance(size, list) and all(_is_int(s) and s >= 1 for s in size),
                "/set_size", "must be an int or list of ints >= 1")
        _expect(all(c == len(size) for c in set_counts), "/set_size",
                "per-set size list requires a matching uniform set count")

    _expect(merged["distribution"] in ("iid", "noniid"), "/distribution",
            "must be 'iid' or 'noniid'")
    _expect(merged["method"] in METHODS, "/method",
            f"must be one of {sorted(METHODS)}")

    for key in ("rounds",):
        _expect(_is_int(merged[key]) and merged[key] >= 0, f"/{key}",
                "must be an integer >= 0")
    for key in ("epochs", "test_size", "majority_per_client", "vat_power_iters"):
        _expect(_is_int(merged[key]) and merged[key] >= 1, f"/{key}",
                "must be an integer >= 1")
    bs = merged["batch_size"]
    _expect(bs is None or (_is_int(bs) and bs >= 1), "/batch_size",
            "must be an integer >= 1 or null for full batch")
    for key in ("local_lr", "global_lr"):
        _expect(_is_num(merged[key]), f"/{key}", "must be a number")
    for key in ("l1_weight", "prior_noise", "mixup_alpha", "mix_weight",
                "confidence_tau", "vat_weight", "vat_radius", "vat_xi"):
        _expect(_is_num(merged[key]) and merged[key] >= 0, f"/{key}",
                "must be a number >= 0")
    _expect(0 < merged["prior_low"] < merged["prior_high"] < 1,
            "/prior_low", "need 0 < prior_low < prior_high < 1")
    mfr = merged["majority_fraction_range"]
    _expect(isinstance(mfr, list) and len(mfr) == 2 and all(_is_num(v) for v in mfr)
            and 0 < mfr[0] <= mfr[1] < 1, "/majority_fraction_range",
            "must be [low, high] with 0 < low <= high < 1")
    _expect(_is_num(merged["minority_fraction_cap"])
            and 0 < merged["minority_fraction_cap"] < 1,
            "/minority_fraction_cap", "must lie in (0, 1)")
    _expect(0 < merged["labeled_fraction"] <= 1, "/labeled_fraction",
            "must lie in (0, 1]")
    _expect(isinstance(merged["hidden_layers"], list)
            and all(_is_int(h) and h >= 1 for h in merged["hidden_layers"]),
            "/hidden_layers", "must be a list of integers >= 1")
    _expect(_is_int(merged["task_seed"]), "/task_seed", "must be an integer")
    _expect(isinstance(merged["per_client_eval"], bool), "/per_client_eval",
            "must be a boolean")

    seeds = merged["seeds"]
    _expect(isinstance(seeds, list) and seeds and all(_is_int(s) for s in seeds),
            "/seeds", "must be a non-empty list of integers")
    _expect(len(set(seeds)) == len(seeds), "/seeds",
            "runs must be distinct (duplicate seed)")

    if merged["method"] == "fedul" and merged["task"]["kind"] == "gaussian":
        k = merged["task"]["classes"]
        bad = [i for i, m in enumerate(set_counts) if m < k]
        _expect(not bad, "/sets_per_client",
                f"surrogate training needs at least {k} sets per client; "
                f"clients {bad} have fewer")

    sweep = merged.get("sweep", {})
    if sweep:
        _expect(isinstance(sweep, dict), "/sweep", "must be an object")
        for key, values in sweep.items():
            _expect(key in _KNOWN_TOP and key not in ("sweep", "task", "seeds"),
                    f"/sweep/{key}", "not a sweepable field")
            _expect(isinstance(values, list) and values, f"/sweep/{key}",
                    "must be a non-empty list")

    cfg = ExperimentConfig(**{k: merged[k] for k in _KNOWN_TOP if k in merged},
                           raw=data)
    return cfg


def parse_config(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError("", f"no such config file: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON: {exc}")
    return validate_config(data)


def expand_sweep(config):
    """Cross product of sweep values; yields (entry_id, ExperimentConfig)."""
    if not config.sweep:
        return [(entry_name(config, 0), config)]
    keys = sorted(config.sweep)
    entries = [dict()]
    for key in keys:
        entries = [dict(e, **{key: v}) for e in entries for v in config.sweep[key]]
    out = []
    for i, override in enumerate(entries):
        data = {k: v for k, v in config.echo().items() if k != "sweep"}
        data.update(override)
        sub = validate_config(data)
        out.append((entry_name(sub, i), sub))
    return out


def entry_name(config, index):
    sets = config.sets_per_client
    m = sets if isinstance(sets, int) else max(sets)
    return f"{config.method}-M{m}-{index:02d}"
