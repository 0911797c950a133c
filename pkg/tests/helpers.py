"""Shared fixtures-building helpers for the test suite."""

import numpy as np

from fedbac.data import Dataset, Partition
from fedbac.rng import RngStream


def class_partition(server_classes, clients_per_server=2, per_client=24, test_per_server=24,
                    input_dim=8, num_classes=None, separation=4.0, seed=0):
    """Partition where server m only holds the labels in ``server_classes[m]``.

    Class means are fixed by ``seed``; each client gets a balanced mix of its
    server's classes.
    """
    C = num_classes or (max(max(c) for c in server_classes) + 1)
    rng = RngStream(seed, "fixture")
    dirs = rng.gen.standard_normal((C, input_dim))
    means = separation * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)

    def draw(classes, n):
        y = np.array([classes[j % len(classes)] for j in range(n)])
        return Dataset(means[y] + rng.gen.standard_normal((n, input_dim)), y)

    clients = [[draw(cl, per_client) for _ in range(clients_per_server)] for cl in server_classes]
    tests = [draw(cl, test_per_server) for cl in server_classes]
    # index bookkeeping is only meaningful for pooled partitions
    client_index = [[np.arange(len(d)) for d in row] for row in clients]
    test_index = [np.arange(len(d)) for d in tests]
    return Partition(clients, tests, C, client_index, test_index)
