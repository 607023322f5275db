"""Machine-readable metrics files and the human summary table.

All floats serialize as 17-significant-digit decimal text, which parses back
to the identical float64, so emitted CSV/JSON are stable golden artifacts.
Wall-clock fields are left empty unless timing was explicitly requested,
keeping default outputs byte-reproducible.
"""

import json
import math
from dataclasses import dataclass, field

CSV_HEADER = "round,run_seed,method,test_error,surrogate_loss,wall_ms"


def fmt17(value):
    """17-significant-digit decimal text; round-trips float64 exactly."""
    if not math.isfinite(value):
        raise ValueError(f"refusing to serialize non-finite value {value!r}")
    return format(float(value), ".17g")


def dump_json(obj, indent=0, compact=False):
    """JSON text with deterministic key order and fmt17 floats."""
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        keys = sorted(obj, key=str)
        if compact:
            return "{" + ", ".join(
                f'"{k}": {dump_json(obj[k], compact=True)}' for k in keys) + "}"
        inner = " " * (indent + 2)
        items = [f'{inner}"{k}": {dump_json(obj[k], indent + 2)}' for k in keys]
        return "{\n" + ",\n".join(items) + "\n" + " " * indent + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if compact:
            return "[" + ", ".join(dump_json(v, compact=True) for v in obj) + "]"
        inner = " " * (indent + 2)
        items = [f"{inner}{dump_json(v, indent + 2)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + " " * indent + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, float):
        return fmt17(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


@dataclass
class ExperimentReport:
    entry_id: str
    method: str
    num_sets: int
    rounds: int
    config: dict
    seeds: list
    final_errors: dict = field(default_factory=dict)   # seed -> float | None
    failures: dict = field(default_factory=dict)       # seed -> message
    curves: dict = field(default_factory=dict)         # seed -> [test errors]
    train_curves: dict = field(default_factory=dict)   # seed -> [train losses]
    client_info: dict = field(default_factory=dict)    # seed -> per-client details
    version: str = "0.1.0"
    total_wall_ms: float = None

    @property
    def succeeded(self):
        return [s for s in self.seeds if self.failures.get(s) is None]

    @property
    def mean_error(self):
        ok = [self.final_errors[s] for s in self.succeeded]
        return sum(ok) / len(ok) if ok else None

    @property
    def std_error(self):
        """Sample (n-1) standard deviation over per-seed final errors."""
        ok = [self.final_errors[s] for s in self.succeeded]
        if len(ok) < 2:
            return 0.0 if ok else None
        mean = sum(ok) / len(ok)
        return math.sqrt(sum((e - mean) ** 2 for e in ok) / (len(ok) - 1))

    def to_json_obj(self):
        return {
            "entry_id": self.entry_id,
            "method": self.method,
            "num_sets": self.num_sets,
            "rounds": self.rounds,
            "config": self.config,
            "seeds": list(self.seeds),
            "final_errors": {str(s): self.final_errors.get(s) for s in self.seeds},
            "failures": {str(s): m for s, m in self.failures.items()},
            "mean_error": self.mean_error,
            "std_error": self.std_error,
            "curves": {str(s): c for s, c in self.curves.items()},
            "train_curves": {str(s): c for s, c in self.train_curves.items()},
            "clients": {str(s): info for s, info in self.client_info.items()},
            "version": self.version,
            "total_wall_ms": self.total_wall_ms,
        }


def csv_rows(method, seed, metrics, timing=False):
    """One CSV line per round for a finished run."""
    rows = []
    for m in metrics:
        wall = fmt17(m.wall_ms) if timing else ""
        rows.append(f"{m.round_index},{seed},{method},{fmt17(m.test_error)},"
                    f"{fmt17(m.train_loss)},{wall}")
    return rows


def jsonl_rows(method, seed, metrics, timing=False):
    rows = []
    for m in metrics:
        obj = {"round": m.round_index, "run_seed": seed, "method": method,
               "test_error": m.test_error, "surrogate_loss": m.train_loss,
               "wall_ms": m.wall_ms if timing else None}
        if m.per_client_errors is not None:
            obj["per_client_errors"] = m.per_client_errors
        rows.append(dump_json(obj, compact=True))
    return rows


def summary_table(reports):
    """Fixed-width text table over entries, sorted by (method, set count)."""
    header = f"{'method':<18}{'M':>5}{'mean_err%':>12}{'std':>9}{'rounds':>9}"
    lines = [header, "-" * len(header)]
    for rep in sorted(reports, key=lambda r: (r.method, r.num_sets)):
        mean = rep.mean_error
        std = rep.std_error
        mean_txt = f"{100 * mean:.3f}" if mean is not None else "-"
        std_txt = f"{100 * std:.3f}" if std is not None else "-"
        lines.append(f"{rep.method:<18}{rep.num_sets:>5}{mean_txt:>12}"
                     f"{std_txt:>9}{rep.rounds:>9}")
    failed = sum(len(r.failures) for r in reports)
    if failed:
        lines.append(f"  ({failed} failed run(s); see report.json)")
    return "\n".join(lines) + "\n"
