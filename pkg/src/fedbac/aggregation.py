"""Weighted parameter averaging for the edge, global, and cluster tiers."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .errors import ConfigError, InputError, ProtocolError
from .model import AdditiveModel, ParamVector


def weighted_mean(contribs: Sequence[tuple[ParamVector, float]]) -> ParamVector:
    """sum_j (w_j / sum w) * params_j with Neumaier-compensated accumulation.

    Accumulates offsets from the first contribution, so coordinates on which
    all inputs agree come back exactly (aggregating identical models is a
    bitwise fixed point). Terms are added strictly in list order, so the
    result is reproducible bit for bit for a given ordering.
    """
    if not contribs:
        raise InputError("weighted_mean needs at least one contribution")
    size = contribs[0][0].shape
    total = 0.0
    for params, w in contribs:
        if params.shape != size:
            raise ConfigError(f"length mismatch: {params.shape} vs {size}")
        if w <= 0:
            raise InputError("weights must be positive")
        total += w
    if len(contribs) == 1:
        return contribs[0][0].copy()
    ref = contribs[0][0]
    acc = np.zeros(size)
    comp = np.zeros(size)
    for params, w in contribs[1:]:
        term = (w / total) * (params - ref)
        t = acc + term
        big = np.abs(acc) >= np.abs(term)
        comp += np.where(big, (acc - t) + term, (term - t) + acc)
        acc = t
    return ref + (acc + comp)


def edge_aggregate(client_models: Sequence[tuple[AdditiveModel, int]]) -> AdditiveModel:
    """Average selected clients' (global, cluster) pairs with weights n_i / n_S."""
    if not client_models:
        raise InputError("edge aggregation over an empty selection")
    first = client_models[0][0]
    g = weighted_mean([(m.global_params, n) for m, n in client_models])
    c = None
    if first.cluster_params is not None:
        c = weighted_mean([(m.cluster_params, n) for m, n in client_models])
    return AdditiveModel(g, c, first.global_config, first.cluster_config)


def global_aggregate(
    server_globals: Sequence[tuple[ParamVector, int]], num_servers: int | None = None
) -> ParamVector:
    """Cloud average over every server, weighted by total server size n_m."""
    if num_servers is not None and len(server_globals) != num_servers:
        raise ProtocolError(
            f"global aggregation expects all {num_servers} servers, got {len(server_globals)}"
        )
    return weighted_mean(server_globals)


def cluster_aggregate(
    members: Sequence[tuple[ParamVector, int]], previous: ParamVector
) -> ParamVector:
    """Average over a cluster's member servers; an empty cluster keeps ``previous``."""
    if not members:
        return previous.copy()
    return weighted_mean(members)
