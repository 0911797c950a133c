"""Synthetic tasks and two-level Dirichlet partitioning."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .rng import RngStream


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labeled examples: ``X`` is (n, input_dim) float64, ``y`` is (n,) int64."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.int64)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise InputError(f"bad dataset shapes X{X.shape} y{y.shape}")
        if not np.all(np.isfinite(X)):
            raise InputError("features must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return int(self.y.shape[0])

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx])

    def class_counts(self, num_classes: int) -> np.ndarray:
        return np.bincount(self.y, minlength=num_classes)

    @staticmethod
    def concat(parts: list["Dataset"]) -> "Dataset":
        return Dataset(np.concatenate([p.X for p in parts]), np.concatenate([p.y for p in parts]))


@dataclass(frozen=True)
class PartitionConfig:
    num_servers: int = 4
    clients_per_server: int = 5
    alpha_server: float = 0.1
    alpha_client: float = 0.5
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.num_servers < 1 or self.clients_per_server < 1:
            raise InputError("num_servers and clients_per_server must be >= 1")
        if self.alpha_server <= 0 or self.alpha_client <= 0:
            raise InputError("Dirichlet concentrations must be > 0")
        if not 0 < self.test_fraction < 1:
            raise InputError("test_fraction must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class Partition:
    """Per-client train sets ``clients[m][i]`` and per-server test sets ``tests[m]``.

    ``index`` keeps the pool indices behind every split so conservation can be
    checked exactly.
    """

    clients: list[list[Dataset]]
    tests: list[Dataset]
    num_classes: int
    client_index: list[list[np.ndarray]] = field(repr=False)
    test_index: list[np.ndarray] = field(repr=False)

    @property
    def num_servers(self) -> int:
        return len(self.clients)

    def client_sizes(self, m: int) -> list[int]:
        return [len(d) for d in self.clients[m]]

    def server_size(self, m: int) -> int:
        return sum(self.client_sizes(m))

    @property
    def server_sizes(self) -> list[int]:
        return [self.server_size(m) for m in range(self.num_servers)]

    @property
    def total_size(self) -> int:
        return sum(self.server_sizes)

    def server_train(self, m: int) -> Dataset:
        return Dataset.concat(self.clients[m])

    def manifest(self) -> dict:
        """JSON-ready summary: per-client class histograms and sample counts."""
        C = self.num_classes
        servers = []
        for m in range(self.num_servers):
            servers.append(
                {
                    "server": m,
                    "n_train": self.server_size(m),
                    "n_test": len(self.tests[m]),
                    "test_histogram": self.tests[m].class_counts(C).tolist(),
                    "clients": [
                        {"client": i, "n": len(d), "histogram": d.class_counts(C).tolist()}
                        for i, d in enumerate(self.clients[m])
                    ],
                }
            )
        return {"num_classes": C, "n_train": self.total_size, "servers": servers}


def sample_dirichlet(alpha: float, C: int, rng: RngStream) -> np.ndarray:
    """Draw from Dir(alpha * 1_C) by normalizing independent Gamma(alpha, 1) draws."""
    if alpha <= 0:
        raise InputError(f"alpha must be > 0, got {alpha}")
    if C < 2:
        raise InputError("need at least 2 categories")
    while True:
        g = rng.gen.gamma(alpha, 1.0, size=C)
        s = g.sum()
        # all-underflow is possible for tiny alpha; redraw
        if s > 0:
            return g / s


def synth_mixture(
    C: int, input_dim: int, samples_per_class: int, class_separation: float, rng: RngStream
) -> Dataset:
    """Isotropic unit-variance Gaussian clusters whose means have norm ``class_separation``."""
    if C < 2 or input_dim < 2:
        raise InputError("need C >= 2 and input_dim >= 2")
    dirs = rng.gen.standard_normal((C, input_dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    means = class_separation * dirs
    y = np.repeat(np.arange(C), samples_per_class)
    X = means[y] + rng.gen.standard_normal((y.size, input_dim))
    order = rng.gen.permutation(y.size)
    return Dataset(X[order], y[order])


def _allocate(
    class_idx: list[np.ndarray], alpha: float, parts: int, rng: RngStream
) -> list[list[np.ndarray]]:
    """Split each class's indices over ``parts`` bins by a multinomial draw.

    Bin proportions come from one Dirichlet draw per bin; each class column is
    renormalized across bins. Returns ``out[bin][class]`` index arrays.
    """
    C = len(class_idx)
    q = np.stack([sample_dirichlet(alpha, C, rng) for _ in range(parts)])
    out: list[list[np.ndarray]] = [[None] * C for _ in range(parts)]  # type: ignore[list-item]
    for c, idx in enumerate(class_idx):
        col = q[:, c]
        total = col.sum()
        probs = col / total if total > 0 else np.full(parts, 1.0 / parts)
        counts = rng.gen.multinomial(idx.size, probs)
        for p, chunk in enumerate(np.split(idx, np.cumsum(counts)[:-1])):
            out[p][c] = chunk
    return out


def _move_one(src: list[np.ndarray], dst: list[np.ndarray]) -> None:
    # take the last sample of the donor's largest class
    c = int(np.argmax([a.size for a in src]))
    dst[c] = np.append(dst[c], src[c][-1])
    src[c] = src[c][:-1]


def _size(bins: list[np.ndarray]) -> int:
    return sum(a.size for a in bins)


def partition_two_level(
    pool: Dataset, cfg: PartitionConfig, rng: RngStream, num_classes: int | None = None
) -> Partition:
    """Two-level Dirichlet/multinomial split of ``pool`` into servers, then clients.

    Each server's allocation first loses a stratified ``test_fraction`` (rounded
    half-up per class) to its test set; the remainder is split over clients with
    ``alpha_client``. Guards keep every server test set and every client nonempty.
    """
    C = int(num_classes if num_classes is not None else pool.y.max() + 1)
    counts = pool.class_counts(C)
    if np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise InputError(f"classes absent from pool: {missing}")
    M, N = cfg.num_servers, cfg.clients_per_server
    if len(pool) < max(C * M, M * (N + 1)):
        raise InputError(f"pool of {len(pool)} samples too small for {M} servers x {N} clients")

    class_idx = [rng.gen.permutation(np.flatnonzero(pool.y == c)) for c in range(C)]
    servers = _allocate(class_idx, cfg.alpha_server, M, rng)

    # every server needs N train samples plus one test sample
    need = N + 1
    for m in range(M):
        while _size(servers[m]) < need:
            donor = int(np.argmax([_size(s) for s in servers]))
            _move_one(servers[donor], servers[m])

    client_index: list[list[np.ndarray]] = []
    test_index: list[np.ndarray] = []
    for m in range(M):
        alloc = servers[m]
        k = [int(np.floor(cfg.test_fraction * a.size + 0.5)) for a in alloc]
        test = [a[:kc] for a, kc in zip(alloc, k)]
        train = [a[kc:] for a, kc in zip(alloc, k)]
        if _size(test) == 0:
            _move_one(train, test)
        while _size(train) < N and _size(test) > 1:
            _move_one(test, train)

        clients = _allocate(train, cfg.alpha_client, N, rng)
        for i in range(N):
            while _size(clients[i]) == 0:
                donor = int(np.argmax([_size(cl) for cl in clients]))
                _move_one(clients[donor], clients[i])
        client_index.append([np.sort(np.concatenate(cl)) for cl in clients])
        test_index.append(np.sort(np.concatenate(test)))

    return Partition(
        clients=[[pool.subset(ix) for ix in row] for row in client_index],
        tests=[pool.subset(ix) for ix in test_index],
        num_classes=C,
        client_index=client_index,
        test_index=test_index,
    )
