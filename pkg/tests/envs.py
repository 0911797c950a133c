"""Synthetic bandit environments shared by unit and acceptance tests."""

import numpy as np

from fedbac.bandits import LinUCBBank, TsState, linucb_update, select_cluster, ts_select, ts_update
from fedbac.rng import RngStream


def linucb_cumulative_regret(seed, T=2000, arms=4, d=4, sigma=0.1, alpha=0.3, policy="ucb"):
    """Stationary linear rewards: unit-norm arm vectors, unit-sphere contexts, Gaussian noise."""
    rng = RngStream(seed, "linucb-env")
    theta = rng.gen.standard_normal((arms, d))
    theta /= np.linalg.norm(theta, axis=1, keepdims=True)
    bank = LinUCBBank(1, arms, alpha)
    regret = np.empty(T)
    for t in range(T):
        x = rng.gen.standard_normal(d)
        x /= np.linalg.norm(x)
        mean = theta @ x
        a = select_cluster(bank, 0, x) if policy == "ucb" else int(rng.gen.integers(arms))
        r = mean[a] + sigma * rng.gen.standard_normal()
        if policy == "ucb":
            bank.arms[0][a] = linucb_update(bank.arms[0][a], x, r)
        regret[t] = mean.max() - mean[a]
    return np.cumsum(regret)


def ts_bad_client_frequency(seed, rounds=500, N=10, B=8, bad=(3, 7), warmup=10):
    """Post-warmup selection frequency per client when ``bad`` clients drag r_ts negative."""
    noise = RngStream(seed, "ts-env")
    select = RngStream(seed, "ts-select")
    state = TsState.fresh(N, B / N, warmup)
    counts = np.zeros(N)
    post = 0
    for t in range(1, rounds + 1):
        sel = ts_select(state, t, select)
        n_bad = sum(1 for i in sel if i in bad)
        r = 0.02 - 0.03 * n_bad + 0.01 * noise.gen.standard_normal()
        state = ts_update(state, sel, r)
        if t > warmup:
            counts[sel] += 1
            post += 1
    return counts / post


def ts_exact_set_frequency(seed, rounds=500, N=6, B=2, good=(1, 4), warmup=10):
    """Fraction of post-warmup rounds selecting exactly ``good``, the only set with r_ts > 0."""
    noise = RngStream(seed, "ts-set-env")
    select = RngStream(seed, "ts-set-select")
    state = TsState.fresh(N, B / N, warmup)
    hits = 0
    for t in range(1, rounds + 1):
        sel = ts_select(state, t, select)
        n_good = sum(1 for i in sel if i in good)
        r = (0.02 if n_good == B else -0.01 * (B - n_good)) + 0.002 * noise.gen.standard_normal()
        state = ts_update(state, sel, r)
        if t > warmup:
            hits += tuple(sel) == tuple(sorted(good))
    return hits / (rounds - warmup)
