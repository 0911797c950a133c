"""Evaluation quantities reported per round and per run."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np

from .data import Partition
from .model import AdditiveModel, evaluate

BYTES_PER_PARAM = 4


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    per_server_accuracy: tuple[float, ...]
    distributed_accuracy: float
    per_server_loss: tuple[float, ...]
    global_objective: float
    comm_bytes_client_edge: int
    active_clusters: int
    cumulative_reassignments: int
    assignment: tuple[int, ...]
    selected_counts: tuple[int, ...]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FairnessStats:
    mean: float
    min: float
    max: float
    sigma: float


def distributed_accuracy(per_server: Sequence[float]) -> float:
    """Unweighted mean over servers."""
    vals = [float(v) for v in per_server]
    if not vals:
        raise ValueError("need at least one server")
    return sum(vals) / len(vals)


def fairness_stats(traces, window: int = 10) -> FairnessStats:
    """Cross-server spread of accuracy over the last ``window`` rounds.

    ``traces`` is (rounds, servers). Each server is first averaged over the
    window, then mean/min/max/population-sigma are taken across servers.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    arr = np.asarray(traces, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    per_server = arr[-window:].mean(axis=0)
    return FairnessStats(
        mean=float(per_server.mean()),
        min=float(per_server.min()),
        max=float(per_server.max()),
        sigma=float(per_server.std()),
    )


def server_objective(model: AdditiveModel, partition: Partition, m: int) -> float:
    """F_m: data-weighted mean of server m's client training losses."""
    total = 0.0
    n_m = 0
    for d in partition.clients[m]:
        _, loss = evaluate(model, d)
        total += len(d) * loss
        n_m += len(d)
    return total / n_m


def global_objective(server_models: Sequence[AdditiveModel], partition: Partition) -> float:
    """sum over clusters and member servers of (n_m / n) F_m(global, cluster).

    ``server_models[m]`` is the predictor server m currently holds; the double
    sum over clusters collapses to a sum over servers because clusters
    partition the servers.
    """
    n = partition.total_size
    return sum(
        partition.server_size(m) / n * server_objective(model, partition, m)
        for m, model in enumerate(server_models)
    )


def comm_cost_round(
    selected_total: int, d_g: int, d_k: int, bytes_per_param: int = BYTES_PER_PARAM
) -> int:
    """Client-to-edge bytes for one round: every selected client downloads and uploads both networks."""
    return 2 * (d_g + d_k) * selected_total * bytes_per_param


def first_round_reaching(trace: Sequence[float], target: float) -> int | None:
    for t, acc in enumerate(trace, start=1):
        if acc >= target:
            return t
    return None


def convergence_ratio(trace_a: Sequence[float], trace_b: Sequence[float], target: float) -> float | None:
    """T_a / T_b for the first rounds reaching ``target``; None when either never does.

    With ``trace_a`` the baseline, a ratio above one means ``trace_b`` is faster.
    """
    if not len(trace_a) or not len(trace_b):
        raise ValueError("traces must be nonempty")
    ta = first_round_reaching(trace_a, target)
    tb = first_round_reaching(trace_b, target)
    if ta is None or tb is None:
        return None
    return ta / tb


def byte_reduction(
    rounds_baseline: int, rounds_method: int, cost_ratio: Fraction
) -> tuple[Fraction, Fraction]:
    """Normalized round-equivalents of the method and the total-byte reduction factor.

    ``cost_ratio`` is the method's per-round cost relative to the baseline's.
    """
    equiv = rounds_method * Fraction(cost_ratio)
    return equiv, Fraction(rounds_baseline) / equiv


def cluster_dynamics(
    history: Sequence[Sequence[int]], initial: Sequence[int] | None = None
) -> tuple[list[int], list[int]]:
    """Active-cluster counts and cumulative server moves per round.

    ``history[t]`` is the assignment after round t+1; ``initial`` is the
    assignment before round 1 (defaults to ``history[0]``).
    """
    active: list[int] = []
    cumulative: list[int] = []
    prev = list(initial) if initial is not None else (list(history[0]) if history else [])
    moves = 0
    for pi in history:
        moves += sum(1 for a, b in zip(prev, pi) if a != b)
        active.append(len(set(pi)))
        cumulative.append(moves)
        prev = list(pi)
    return active, cumulative
