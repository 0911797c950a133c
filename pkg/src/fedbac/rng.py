"""Named, hierarchically derived random streams.

Every logical actor (partitioner, client trainer, per-server selector, model
init) gets its own stream derived from ``(seed, path)``, so the draws one
actor makes never shift another actor's sequence.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _path_key(path: str) -> list[int]:
    digest = hashlib.sha256(path.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


class RngStream:
    """A numpy ``Generator`` tagged with the path it was derived from."""

    def __init__(self, seed: int, path: str = ""):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)
        self.path = path
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=_path_key(path))
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, name: str) -> "RngStream":
        """Derive an independent stream; depends only on (seed, full path)."""
        if not name:
            raise ValueError("stream name must be non-empty")
        path = f"{self.path}/{name}" if self.path else name
        return RngStream(self.seed, path)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={self.path!r})"
