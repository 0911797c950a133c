"""Experiment execution and result serialization shared by the CLI and the service."""

from __future__ import annotations

import csv
import io
import json
import os
import statistics
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, MethodSpec, dump_config
from .data import Partition, partition_two_level, synth_mixture
from .errors import ConfigError
from .metrics import RoundMetrics, fairness_stats, first_round_reaching
from .orchestrator import Method, MethodConfig, bandit_snapshot, simulate
from .rng import RngStream

# Scalar columns first, then per-server blocks; this order is the stable CSV schema.
SCALAR_COLUMNS = (
    "round",
    "distributed_accuracy",
    "global_objective",
    "comm_bytes_client_edge",
    "active_clusters",
    "cumulative_reassignments",
)
PER_SERVER_COLUMNS = (
    ("acc", "per_server_accuracy"),
    ("loss", "per_server_loss"),
    ("cluster", "assignment"),
    ("selected", "selected_counts"),
)


def csv_header(num_servers: int) -> list[str]:
    cols = list(SCALAR_COLUMNS)
    for prefix, _ in PER_SERVER_COLUMNS:
        cols += [f"{prefix}_s{m}" for m in range(num_servers)]
    return cols


def metrics_csv(rows: list[RoundMetrics]) -> str:
    """Per-round CSV text; floats use repr so values round-trip exactly."""
    M = len(rows[0].per_server_accuracy) if rows else 0
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_header(M))
    for r in rows:
        line = [_fmt(getattr(r, c)) for c in SCALAR_COLUMNS]
        for _, attr in PER_SERVER_COLUMNS:
            line += [_fmt(v) for v in getattr(r, attr)]
        w.writerow(line)
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(int(v))


def build_partition(cfg: ExperimentConfig, seed: int) -> Partition:
    root = RngStream(seed)
    t = cfg.task
    pool = synth_mixture(
        t.num_classes, t.input_dim, t.samples_per_class, t.class_separation, root.child("task")
    )
    return partition_two_level(pool, cfg.partition.build(), root.child("partition"), t.num_classes)


def summarize_run(rows: list[RoundMetrics], cfg: ExperimentConfig) -> dict:
    window = cfg.metrics.fairness_window
    acc = np.array([r.per_server_accuracy for r in rows])
    dist = [r.distributed_accuracy for r in rows]
    fs = fairness_stats(acc * 100.0, window)
    return {
        "final_distributed_accuracy": dist[-1],
        "mean_distributed_accuracy_last_window": float(np.mean(dist[-window:])),
        "fairness_pp": {"mean": fs.mean, "min": fs.min, "max": fs.max, "sigma": fs.sigma},
        "convergence_rounds": {repr(t): first_round_reaching(dist, t) for t in cfg.metrics.targets},
        "total_comm_bytes": int(sum(r.comm_bytes_client_edge for r in rows)),
        "final_global_objective": rows[-1].global_objective,
        "final_assignment": list(rows[-1].assignment),
        "final_active_clusters": rows[-1].active_clusters,
        "cumulative_reassignments": rows[-1].cumulative_reassignments,
    }


def _mean_std(xs: list[float]) -> dict:
    return {
        "mean": statistics.fmean(xs),
        "std": statistics.stdev(xs) if len(xs) > 1 else 0.0,
        "values": xs,
    }


def _method_labels(specs: list[MethodSpec]) -> list[str]:
    labels, seen = [], {}
    for s in specs:
        base = s.label
        seen[base] = seen.get(base, 0) + 1
        labels.append(base if seen[base] == 1 else f"{base}{seen[base]}")
    return labels


@dataclass
class Report:
    """Everything a run produces: CSV texts keyed by file name and the summary."""

    csvs: dict[str, str] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    traces: dict[str, dict[int, list[RoundMetrics]]] = field(default_factory=dict, repr=False)
    # auxiliary JSON documents (bandit snapshots), keyed by file name
    extra: dict[str, dict] = field(default_factory=dict)

    def write(self, out_dir: str | Path, summary_name: str = "summary.json") -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name, text in self.csvs.items():
            (out / name).parent.mkdir(parents=True, exist_ok=True)
            written.append(atomic_write(out / name, text))
        for name, doc in self.extra.items():
            (out / name).parent.mkdir(parents=True, exist_ok=True)
            written.append(atomic_write(out / name, json.dumps(doc, indent=2) + "\n"))
        written.append(atomic_write(out / summary_name, json.dumps(self.summary, indent=2) + "\n"))
        return written


def atomic_write(path: Path, text: str) -> Path:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _comparison(per_method: dict[str, dict], resolved: dict[str, MethodConfig], targets) -> dict:
    """Table-style deltas (pp) and convergence ratios against Fed-BAC."""
    by_kind: dict[Method, str] = {}
    for label, mc in resolved.items():
        by_kind.setdefault(mc.method, label)
    out: dict = {}
    fb = by_kind.get(Method.FEDBAC)
    if fb is None:
        return out
    fb_acc = per_method[fb]["accuracy"]["values"]
    for kind, key in ((Method.HIERFAVG, "delta_H_pp"), (Method.IFCA, "delta_I_pp")):
        other = by_kind.get(kind)
        if other is not None:
            vals = per_method[other]["accuracy"]["values"]
            out[key] = 100.0 * (statistics.fmean(fb_acc) - statistics.fmean(vals))
    hf = by_kind.get(Method.HIERFAVG)
    if hf is not None:
        ratios = {}
        for t in targets:
            tb = per_method[hf]["convergence_rounds"][repr(t)]
            tf = per_method[fb]["convergence_rounds"][repr(t)]
            ratios[repr(t)] = None if tb is None or tf is None else tb / tf
        out["convergence_ratio_hierfavg_over_fedbac"] = ratios
    return out


def _mean_round(xs: list[int | None]) -> float | None:
    return None if any(x is None for x in xs) else statistics.fmean(xs)


def run_config(
    cfg: ExperimentConfig, seeds: list[int] | None = None, deterministic: bool = True
) -> Report:
    """Run every configured method for every seed."""
    seeds = cfg.seed_list() if seeds is None else list(seeds)
    if not seeds:
        raise ConfigError("at least one seed is required")
    resolved_list = cfg.resolved_methods()
    labels = _method_labels(cfg.methods)
    resolved = dict(zip(labels, resolved_list))
    learner = cfg.learner_config()
    hp = cfg.sgd.build()
    report = Report()
    runs: dict[str, dict[int, dict]] = {label: {} for label in labels}
    for seed in seeds:
        partition = build_partition(cfg, seed)
        for label, mc in resolved.items():
            rows, state = simulate(
                mc, partition, learner, hp, cfg.rounds, seed, cfg.metrics.bytes_per_param
            )
            report.csvs[f"{label}_seed{seed}.csv"] = metrics_csv(rows)
            if mc.method is Method.FEDBAC:
                report.extra[f"{label}_seed{seed}_bandits.json"] = bandit_snapshot(state)
            report.traces.setdefault(label, {})[seed] = rows
            runs[label][seed] = summarize_run(rows, cfg)

    per_method = {}
    for label in labels:
        s = runs[label]
        per_method[label] = {
            "accuracy": _mean_std([s[x]["mean_distributed_accuracy_last_window"] for x in seeds]),
            "final_accuracy": _mean_std([s[x]["final_distributed_accuracy"] for x in seeds]),
            "sigma_pp": _mean_std([s[x]["fairness_pp"]["sigma"] for x in seeds]),
            "convergence_rounds": {
                repr(t): _mean_round([s[x]["convergence_rounds"][repr(t)] for x in seeds])
                for t in cfg.metrics.targets
            },
            "seeds": {str(x): s[x] for x in seeds},
        }
    summary = {
        "format_version": 1,
        "seeds": seeds,
        "methods": per_method,
        "comparison": _comparison(per_method, resolved, cfg.metrics.targets),
        "config": cfg.model_dump(mode="json"),
        "config_yaml": dump_config(cfg),
    }
    if not deterministic:
        summary["created_at"] = datetime.now(timezone.utc).isoformat()
    report.summary = summary
    return report


CANONICAL_METHODS = (Method.FEDBAC, Method.IFCA, Method.HIERFAVG)


def comparison_config(cfg: ExperimentConfig) -> ExperimentConfig:
    """Ensure all three methods are present, keeping any explicitly configured ones."""
    present = {m.name for m in cfg.methods}
    methods = list(cfg.methods) + [MethodSpec(name=k) for k in CANONICAL_METHODS if k not in present]
    return cfg.model_copy(update={"methods": methods})


# sweepable numeric fields; bare names are resolved by section
SWEEP_AXES = {
    "alpha_server": ("partition", "alpha_server"),
    "alpha_client": ("partition", "alpha_client"),
    "num_servers": ("partition", "num_servers"),
    "clients_per_server": ("partition", "clients_per_server"),
    "test_fraction": ("partition", "test_fraction"),
    "class_separation": ("task", "class_separation"),
    "samples_per_class": ("task", "samples_per_class"),
    "rounds": (None, "rounds"),
    "lr_init": ("sgd", "lr_init"),
    "local_epochs": ("sgd", "local_epochs"),
    "cluster_l2": ("sgd", "cluster_l2"),
    "participation": ("methods", "participation"),
    "k_max": ("methods", "k_max"),
    "alpha_ucb": ("methods", "alpha_ucb"),
    "reassign_period": ("methods", "reassign_period"),
}


def resolve_axis(axis: str) -> tuple[str | None, str]:
    name = axis.split(".")[-1]
    if name not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {', '.join(sorted(SWEEP_AXES))}")
    section, key = SWEEP_AXES[name]
    if "." in axis and axis.split(".")[0] != (section or ""):
        raise ConfigError(f"unknown sweep axis {axis!r}")
    return section, key


def apply_axis(cfg: ExperimentConfig, axis: str, value: float) -> ExperimentConfig:
    section, key = resolve_axis(axis)
    data = cfg.model_dump(mode="json")
    if section is None:
        data[key] = value
    elif section == "methods":
        # participation only applies where the method allows it
        for m in data["methods"]:
            if key in ("participation", "k_max") and m["name"] == Method.HIERFAVG.value:
                continue
            m[key] = value
    else:
        data[section][key] = value
    try:
        return ExperimentConfig.model_validate(data)
    except ValueError as exc:
        raise ConfigError(f"{axis}={value}: {exc}") from exc


def sweep_config(
    cfg: ExperimentConfig,
    axis: str,
    values: list[float],
    seeds: list[int] | None = None,
    deterministic: bool = True,
) -> Report:
    """One run per value per seed; CSVs are namespaced by ``<axis>=<value>/``."""
    if not values:
        raise ConfigError("sweep needs at least one value")
    resolve_axis(axis)
    variants = [(v, apply_axis(cfg, axis, v)) for v in values]
    for _, c in variants:
        c.resolved_methods()
    report = Report()
    table = []
    for value, c in variants:
        sub = run_config(c, seeds, deterministic=True)
        tag = f"{axis.split('.')[-1]}={value!r}"
        for name, text in sub.csvs.items():
            report.csvs[f"{tag}/{name}"] = text
        for name, doc in sub.extra.items():
            report.extra[f"{tag}/{name}"] = doc
        for label, res in sub.summary["methods"].items():
            table.append(
                {
                    "value": value,
                    "method": label,
                    "accuracy_mean": res["accuracy"]["mean"],
                    "accuracy_std": res["accuracy"]["std"],
                    "sigma_pp_mean": res["sigma_pp"]["mean"],
                }
            )
    report.summary = {
        "format_version": 1,
        "axis": axis,
        "values": list(values),
        "seeds": seeds if seeds is not None else cfg.seed_list(),
        "table": table,
        "config": cfg.model_dump(mode="json"),
    }
    if not deterministic:
        report.summary["created_at"] = datetime.now(timezone.utc).isoformat()
    return report

