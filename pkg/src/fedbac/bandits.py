"""Per-server LinUCB cluster assignment and budgeted Thompson Sampling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import InputError
from .rng import RngStream

CONTEXT_DIM = 4


@dataclass
class LinUCBArmState:
    A: np.ndarray = field(default_factory=lambda: np.eye(CONTEXT_DIM))
    b: np.ndarray = field(default_factory=lambda: np.zeros(CONTEXT_DIM))

    def copy(self) -> "LinUCBArmState":
        return LinUCBArmState(self.A.copy(), self.b.copy())


class LinUCBBank:
    """One independent grid of ``k_max`` arms per server."""

    def __init__(self, num_servers: int, k_max: int, alpha_ucb: float = 0.3, epsilon: float = 1e-8):
        if alpha_ucb < 0:
            raise InputError("alpha_ucb must be >= 0")
        if k_max < 1:
            raise InputError("k_max must be >= 1")
        self.alpha_ucb = alpha_ucb
        self.epsilon = epsilon
        self.arms = [[LinUCBArmState() for _ in range(k_max)] for _ in range(num_servers)]

    @property
    def k_max(self) -> int:
        return len(self.arms[0])

    def snapshot(self) -> dict:
        return {
            "alpha_ucb": self.alpha_ucb,
            "epsilon": self.epsilon,
            "arms": [
                [{"A": arm.A.tolist(), "b": arm.b.tolist()} for arm in row] for row in self.arms
            ],
        }

    @classmethod
    def from_snapshot(cls, snap: dict) -> "LinUCBBank":
        arms = snap["arms"]
        bank = cls(len(arms), len(arms[0]), snap["alpha_ucb"], snap["epsilon"])
        bank.arms = [
            [LinUCBArmState(np.array(a["A"], dtype=float), np.array(a["b"], dtype=float)) for a in row]
            for row in arms
        ]
        return bank


@dataclass(frozen=True)
class ServerContext:
    loss_current: float
    loss_best_alt: float
    size_current: int
    size_alt: int
    tenure: int
    round: int
    horizon: int
    reassign_period: int
    best_alt_cluster: int = -1


def extract_features(ctx: ServerContext, epsilon: float = 1e-8) -> np.ndarray:
    """[log loss ratio, cluster balance, saturating tenure, training phase]."""
    if ctx.loss_current < 0 or ctx.loss_best_alt < 0:
        raise InputError("losses must be >= 0")
    fit = np.log((ctx.loss_current + epsilon) / (ctx.loss_best_alt + epsilon))
    total = ctx.size_current + ctx.size_alt
    balance = (ctx.size_current - ctx.size_alt) / total if total else 0.0
    stability = min(ctx.tenure / (2 * ctx.reassign_period), 1.0)
    phase = ctx.round / ctx.horizon
    return np.array([fit, balance, stability, phase], dtype=np.float64)


def ucb_score(arm: LinUCBArmState, x: np.ndarray, alpha_ucb: float) -> float:
    if np.linalg.cond(arm.A) > 1e12:
        raise RuntimeError("LinUCB design matrix is numerically singular")
    fac = cho_factor(arm.A, lower=True)
    theta = cho_solve(fac, arm.b)
    width = float(x @ cho_solve(fac, x))
    return float(theta @ x) + alpha_ucb * np.sqrt(max(width, 0.0))


def select_cluster(bank: LinUCBBank, server: int, x: np.ndarray) -> int:
    scores = [ucb_score(arm, x, bank.alpha_ucb) for arm in bank.arms[server]]
    return int(np.argmax(scores))  # first max wins ties


def compute_reward(loss_current: float, loss_best_alt: float, epsilon: float = 1e-8) -> float:
    return (loss_best_alt - loss_current) / (loss_best_alt + loss_current + epsilon)


def linucb_update(arm: LinUCBArmState, x: np.ndarray, r: float) -> LinUCBArmState:
    if not np.isfinite(r):
        raise InputError("reward must be finite")
    return LinUCBArmState(arm.A + np.outer(x, x), arm.b + r * x)


@dataclass
class TsState:
    """Beta posteriors for one server's clients plus the selection budget."""

    alpha: np.ndarray
    beta: np.ndarray
    budget: int
    warmup: int = 10
    prev_accuracy: float = 0.0

    @classmethod
    def fresh(cls, num_clients: int, participation: float, warmup: int = 10) -> "TsState":
        budget = int(np.floor(participation * num_clients + 1e-9))
        if not 1 <= budget <= num_clients:
            raise InputError(
                f"budget floor({participation}*{num_clients}) = {budget} must lie in [1, {num_clients}]"
            )
        return cls(np.ones(num_clients), np.ones(num_clients), budget, warmup)

    @property
    def num_clients(self) -> int:
        return self.alpha.size

    def copy(self) -> "TsState":
        return TsState(self.alpha.copy(), self.beta.copy(), self.budget, self.warmup, self.prev_accuracy)

    def snapshot(self) -> dict:
        return {
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "budget": self.budget,
            "warmup": self.warmup,
            "prev_accuracy": self.prev_accuracy,
        }


def ts_select(state: TsState, round: int, rng: RngStream) -> np.ndarray:
    """Sorted indices of the ``budget`` selected clients for a 1-based ``round``."""
    n, B = state.num_clients, state.budget
    if B > n:
        raise InputError("budget exceeds client count")
    if round <= state.warmup:
        chosen = rng.gen.choice(n, size=B, replace=False)
    else:
        draws = rng.gen.beta(state.alpha, state.beta)
        # stable sort on -draws keeps the lowest index first among ties
        chosen = np.argsort(-draws, kind="stable")[:B]
    return np.sort(chosen)


def ts_update(state: TsState, selected, r_ts: float) -> TsState:
    """Soft collective update: every selected client shares the same reward."""
    if not np.isfinite(r_ts):
        raise InputError("r_ts must be finite")
    delta = min(10.0 * abs(r_ts), 2.0)
    out = state.copy()
    sel = np.asarray(selected, dtype=np.int64)
    if r_ts > 0:
        out.alpha[sel] += delta
    else:
        out.beta[sel] += delta
    return out
