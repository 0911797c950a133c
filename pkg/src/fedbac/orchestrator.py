"""Round loop for Fed-BAC and the HierFAVG / IFCA baselines."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import bandits
from .aggregation import cluster_aggregate, edge_aggregate, global_aggregate
from .bandits import LinUCBBank, ServerContext, TsState
from .data import Partition
from .errors import ConfigError
from .metrics import RoundMetrics, comm_cost_round, distributed_accuracy, global_objective
from .model import AdditiveModel, LearnerConfig, SgdHyperparams, evaluate, init_params, local_sgd
from .rng import RngStream


class Method(str, Enum):
    FEDBAC = "fedbac"
    HIERFAVG = "hierfavg"
    IFCA = "ifca"


@dataclass(frozen=True)
class MethodConfig:
    method: Method = Method.FEDBAC
    k_max: int = 4
    participation: float = 0.8
    reassign_period: int = 20
    ts_warmup: int = 10
    ifca_threshold: float = 0.95
    init_assignment: str = "round_robin"
    alpha_ucb: float = 0.3
    epsilon: float = 1e-8
    # HierFAVG only: train a global+cluster pair with a single cluster
    additive: bool = False
    # HierFAVG only: multiply hidden widths (capacity-matched baseline)
    width_factor: int = 1

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.init_assignment not in ("round_robin", "uniform"):
            raise ConfigError(f"unknown init_assignment {self.init_assignment!r}")
        if not 0 < self.participation <= 1:
            raise ConfigError("participation must lie in (0, 1]")
        if self.k_max < 1 or self.reassign_period < 1 or self.width_factor < 1:
            raise ConfigError("k_max, reassign_period and width_factor must be >= 1")
        if self.method is Method.HIERFAVG and (self.k_max != 1 or self.participation != 1.0):
            raise ConfigError("hierfavg requires k_max = 1 and participation = 1.0")
        if self.method is not Method.HIERFAVG and (self.additive or self.width_factor != 1):
            raise ConfigError("additive and width_factor apply to hierfavg only")

    @classmethod
    def defaults(cls, method: Method | str, num_servers: int) -> "MethodConfig":
        method = Method(method)
        if method is Method.HIERFAVG:
            return cls(method, k_max=1, participation=1.0)
        if method is Method.IFCA:
            return cls(method, k_max=5, participation=1.0)
        return cls(method, k_max=num_servers, participation=0.8)

    def validate_for(self, num_servers: int) -> None:
        if self.method is Method.FEDBAC and self.k_max > num_servers:
            raise ConfigError(f"fedbac needs k_max <= M ({self.k_max} > {num_servers})")


@dataclass
class ClusterAssignment:
    pi: list[int]
    tenure: list[int]

    def members(self, k_max: int) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(k_max)]
        for m, k in enumerate(self.pi):
            out[k].append(m)
        return out

    def active_clusters(self) -> int:
        return len(set(self.pi))


@dataclass
class RoundState:
    method: MethodConfig
    learner: LearnerConfig
    global_params: np.ndarray | None
    cluster_params: list[np.ndarray]
    assignment: ClusterAssignment
    ts_states: list[TsState]
    select_rngs: list[RngStream] = field(repr=False)
    bank: LinUCBBank | None
    round: int
    horizon: int
    cumulative_reassignments: int = 0

    def server_model(self, m: int) -> AdditiveModel:
        """The predictor server m holds under the current assignment."""
        return self.cluster_model(self.assignment.pi[m])

    def cluster_model(self, k: int) -> AdditiveModel:
        cfg = self.learner
        if self.method.method is Method.IFCA:
            return AdditiveModel(self.cluster_params[k], None, cfg)
        if self.method.method is Method.HIERFAVG and not self.method.additive:
            return AdditiveModel(self.global_params, None, cfg)
        return AdditiveModel(self.global_params, self.cluster_params[k], cfg, cfg)

    @property
    def sizes(self) -> tuple[int, int]:
        """(d_g, d_k) transmitted per selected client."""
        m = self.cluster_model(0)
        d_k = 0 if m.cluster_params is None else m.cluster_params.size
        return m.global_params.size, d_k


@dataclass
class EdgeResult:
    aggregate: AdditiveModel
    accuracy: float
    selected: np.ndarray
    ts_state: TsState


def init_state(
    method: MethodConfig,
    partition: Partition,
    learner: LearnerConfig,
    horizon: int,
    seed: int,
) -> RoundState:
    """Seeded initial parameters, assignment and bandit state.

    The global network always draws from the same stream, so every method
    starts from the same global init for a given seed.
    """
    M = partition.num_servers
    method.validate_for(M)
    root = RngStream(seed)
    if method.method is Method.HIERFAVG:
        learner = learner.widened(method.width_factor)
    K = method.k_max
    global_init = init_params(learner, root.child("init/global"))

    if method.method is Method.IFCA:
        global_params = None
        clusters = [
            global_init.copy() if k == 0 else init_params(learner, root.child(f"init/cluster/{k}"))
            for k in range(K)
        ]
    elif method.method is Method.HIERFAVG and not method.additive:
        global_params = global_init
        clusters = []
    else:
        global_params = global_init
        clusters = [init_params(learner, root.child(f"init/cluster/{k}")) for k in range(K)]

    if method.init_assignment == "round_robin":
        pi = [m % K for m in range(M)]
    else:
        pi = [0] * M

    warmup = method.ts_warmup if method.method is Method.FEDBAC else horizon
    ts_states = [
        TsState.fresh(len(partition.clients[m]), method.participation, warmup) for m in range(M)
    ]
    bank = (
        LinUCBBank(M, K, method.alpha_ucb, method.epsilon) if method.method is Method.FEDBAC else None
    )
    return RoundState(
        method=method,
        learner=learner,
        global_params=global_params,
        cluster_params=clusters,
        assignment=ClusterAssignment(pi, [0] * M),
        ts_states=ts_states,
        select_rngs=[root.child(f"select/s{m}") for m in range(M)],
        bank=bank,
        round=0,
        horizon=horizon,
    )


def edge_round(
    server: int, state: RoundState, partition: Partition, hp: SgdHyperparams, rng: RngStream
) -> EdgeResult:
    """Select clients, train them from the broadcast model, aggregate, evaluate.

    ``state.round`` is the round being executed (1-based). ``rng`` is the run's
    root stream; each client's training draws from its own child stream.
    """
    t = state.round
    ts = state.ts_states[server]
    selected = bandits.ts_select(ts, t, state.select_rngs[server])
    broadcast = state.server_model(server)
    trained = []
    for i in selected:
        data = partition.clients[server][i]
        client_rng = rng.child(f"train/s{server}/c{i}/t{t}")
        trained.append((local_sgd(broadcast, data, hp, t - 1, client_rng), len(data)))
    agg = edge_aggregate(trained)
    acc, _ = evaluate(agg, partition.tests[server])
    if state.method.method is Method.FEDBAC:
        ts = bandits.ts_update(ts, selected, acc - ts.prev_accuracy)
    else:
        ts = ts.copy()
    ts.prev_accuracy = acc
    return EdgeResult(agg, acc, selected, ts)


def _edge_phase(state: RoundState, partition: Partition, hp: SgdHyperparams, rng: RngStream):
    results = [edge_round(m, state, partition, hp, rng) for m in range(partition.num_servers)]
    state.ts_states = [r.ts_state for r in results]
    return results


def _aggregate_clusters(state: RoundState, partition: Partition, params_of) -> None:
    members = state.assignment.members(len(state.cluster_params))
    state.cluster_params = [
        cluster_aggregate([(params_of(m), partition.server_size(m)) for m in mem], prev)
        for mem, prev in zip(members, state.cluster_params)
    ]


def _apply_moves(state: RoundState, new_pi: list[int]) -> int:
    a = state.assignment
    moves = 0
    for m, k in enumerate(new_pi):
        if k != a.pi[m]:
            a.tenure[m] = 0
            moves += 1
    a.pi = list(new_pi)
    state.cumulative_reassignments += moves
    return moves


def _cluster_losses(state: RoundState, partition: Partition, m: int) -> list[float]:
    K = len(state.cluster_params)
    return [evaluate(state.cluster_model(k), partition.tests[m])[1] for k in range(K)]


def cloud_round_fedbac(
    state: RoundState, partition: Partition, hp: SgdHyperparams, rng: RngStream
) -> list[EdgeResult]:
    state.round += 1
    M = partition.num_servers
    results = _edge_phase(state, partition, hp, rng)
    state.global_params = global_aggregate(
        [(r.aggregate.global_params, partition.server_size(m)) for m, r in enumerate(results)],
        num_servers=M,
    )
    _aggregate_clusters(state, partition, lambda m: results[m].aggregate.cluster_params)
    a = state.assignment
    a.tenure = [x + 1 for x in a.tenure]
    if state.round % state.method.reassign_period == 0:
        _linucb_reassign(state, partition)
    return results


def _linucb_reassign(state: RoundState, partition: Partition) -> None:
    """Reward the elapsed assignment, update its arm, then pick via UCB.

    All servers are scored against the same pre-event assignment; moves apply
    together afterwards.
    """
    cfg = state.method
    K = cfg.k_max
    a = state.assignment
    sizes = [len(mem) for mem in a.members(K)]
    new_pi = []
    for m in range(partition.num_servers):
        losses = _cluster_losses(state, partition, m)
        cur = a.pi[m]
        alts = [k for k in range(K) if k != cur]
        alt = min(alts, key=lambda k: (losses[k], k)) if alts else cur
        ctx = ServerContext(
            loss_current=losses[cur],
            loss_best_alt=losses[alt],
            size_current=sizes[cur],
            size_alt=sizes[alt],
            tenure=a.tenure[m],
            round=state.round,
            horizon=state.horizon,
            reassign_period=cfg.reassign_period,
            best_alt_cluster=alt,
        )
        x = bandits.extract_features(ctx, cfg.epsilon)
        r = bandits.compute_reward(losses[cur], losses[alt], cfg.epsilon)
        state.bank.arms[m][cur] = bandits.linucb_update(state.bank.arms[m][cur], x, r)
        new_pi.append(bandits.select_cluster(state.bank, m, x))
    _apply_moves(state, new_pi)


def cloud_round_hierfavg(
    state: RoundState, partition: Partition, hp: SgdHyperparams, rng: RngStream
) -> list[EdgeResult]:
    state.round += 1
    M = partition.num_servers
    results = _edge_phase(state, partition, hp, rng)
    state.global_params = global_aggregate(
        [(r.aggregate.global_params, partition.server_size(m)) for m, r in enumerate(results)],
        num_servers=M,
    )
    if state.method.additive:
        _aggregate_clusters(state, partition, lambda m: results[m].aggregate.cluster_params)
    state.assignment.tenure = [x + 1 for x in state.assignment.tenure]
    return results


def cloud_round_ifca(
    state: RoundState, partition: Partition, hp: SgdHyperparams, rng: RngStream
) -> list[EdgeResult]:
    state.round += 1
    results = _edge_phase(state, partition, hp, rng)
    _aggregate_clusters(state, partition, lambda m: results[m].aggregate.global_params)
    a = state.assignment
    a.tenure = [x + 1 for x in a.tenure]
    if state.round % state.method.reassign_period == 0:
        thr = state.method.ifca_threshold
        new_pi = []
        for m in range(partition.num_servers):
            losses = _cluster_losses(state, partition, m)
            cur = a.pi[m]
            best = int(np.argmin(losses))
            new_pi.append(best if best != cur and losses[best] < thr * losses[cur] else cur)
        _apply_moves(state, new_pi)
    return results


_ROUND = {
    Method.FEDBAC: cloud_round_fedbac,
    Method.HIERFAVG: cloud_round_hierfavg,
    Method.IFCA: cloud_round_ifca,
}


def step(
    state: RoundState,
    partition: Partition,
    hp: SgdHyperparams,
    rng: RngStream,
    bytes_per_param: int = 4,
) -> RoundMetrics:
    """Run one synchronous round and measure the resulting server models.

    Servers are scored with the cluster they trained in during this round; a
    reassignment made at the end of the round shows up from the next round.
    """
    held = list(state.assignment.pi)
    results = _ROUND[state.method.method](state, partition, hp, rng)
    M = partition.num_servers
    models = [state.cluster_model(held[m]) for m in range(M)]
    evals = [evaluate(models[m], partition.tests[m]) for m in range(M)]
    acc = tuple(e[0] for e in evals)
    d_g, d_k = state.sizes
    selected_counts = tuple(int(r.selected.size) for r in results)
    return RoundMetrics(
        round=state.round,
        per_server_accuracy=acc,
        distributed_accuracy=distributed_accuracy(acc),
        per_server_loss=tuple(e[1] for e in evals),
        global_objective=global_objective(models, partition),
        comm_bytes_client_edge=comm_cost_round(sum(selected_counts), d_g, d_k, bytes_per_param),
        active_clusters=state.assignment.active_clusters(),
        cumulative_reassignments=state.cumulative_reassignments,
        assignment=tuple(state.assignment.pi),
        selected_counts=selected_counts,
    )


def simulate(
    method: MethodConfig,
    partition: Partition,
    learner: LearnerConfig,
    hp: SgdHyperparams,
    T: int,
    seed: int,
    bytes_per_param: int = 4,
) -> tuple[list[RoundMetrics], RoundState]:
    """Run T rounds; returns the per-round metrics and the final state."""
    if T < 1:
        raise ConfigError("T must be >= 1")
    state = init_state(method, partition, learner, T, seed)
    rng = RngStream(seed)
    rows = [step(state, partition, hp, rng, bytes_per_param) for _ in range(T)]
    return rows, state


def run_experiment(
    method: MethodConfig,
    partition: Partition,
    learner: LearnerConfig,
    hp: SgdHyperparams,
    T: int,
    seed: int,
    bytes_per_param: int = 4,
) -> list[RoundMetrics]:
    return simulate(method, partition, learner, hp, T, seed, bytes_per_param)[0]


def bandit_snapshot(state: RoundState) -> dict:
    """JSON-ready LinUCB arms, TS posteriors and the assignment."""
    return {
        "round": state.round,
        "assignment": list(state.assignment.pi),
        "tenure": list(state.assignment.tenure),
        "linucb": state.bank.snapshot() if state.bank is not None else None,
        "thompson": [ts.snapshot() for ts in state.ts_states],
    }
