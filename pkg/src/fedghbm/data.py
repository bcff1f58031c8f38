"""Client partitions of a global dataset, and the per-round local batch stream."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import InfeasiblePartitionError


@dataclass(frozen=True, eq=False)
class Partition:
    client_indices: List[np.ndarray]

    def __post_init__(self):
        arrs = [np.asarray(ix, dtype=np.int64) for ix in self.client_indices]
        object.__setattr__(self, "client_indices", arrs)

    @property
    def K(self) -> int:
        return len(self.client_indices)

    def sizes(self) -> List[int]:
        return [len(ix) for ix in self.client_indices]

    def validate(self, n: int) -> None:
        """Disjoint, covering ``range(n)``, every client non-empty."""
        if any(len(ix) == 0 for ix in self.client_indices):
            raise InfeasiblePartitionError("a client received no samples")
        allidx = np.concatenate(self.client_indices)
        if len(allidx) != n or not np.array_equal(np.sort(allidx), np.arange(n)):
            raise InfeasiblePartitionError("partition is not a disjoint cover of the dataset")

    def equals(self, other: "Partition") -> bool:
        return self.K == other.K and all(
            np.array_equal(a, b) for a, b in zip(self.client_indices, other.client_indices)
        )

    def to_json(self) -> str:
        return json.dumps([ix.tolist() for ix in self.client_indices])

    @classmethod
    def from_json(cls, text: str) -> "Partition":
        return cls([np.asarray(ix, dtype=np.int64) for ix in json.loads(text)])


def _check_feasible(n: int, K: int) -> None:
    if K < 1:
        raise InfeasiblePartitionError("need at least one client")
    if K > n:
        raise InfeasiblePartitionError(f"cannot give {K} clients a sample each from {n} rows")


def _quotas(n: int, K: int) -> np.ndarray:
    q = np.full(K, n // K, dtype=np.int64)
    q[: n % K] += 1
    return q


def partition_iid(n: int, K: int, seed: int = 0) -> Partition:
    _check_feasible(n, K)
    perm = np.random.default_rng(seed).permutation(n)
    return Partition(np.array_split(perm, K))


def partition_domain_split(x, K: int) -> Partition:
    """Contiguous blocks of the x-sorted sample order.

    ``x`` is the scalar feature column (or a regression ``Dataset``).
    """
    if hasattr(x, "features"):
        x = x.features[:, 0]
    x = np.asarray(x).reshape(-1)
    _check_feasible(len(x), K)
    order = np.argsort(x, kind="stable")
    return Partition(np.array_split(order, K))


def partition_dirichlet(labels, K: int, alpha: float, seed: int = 0) -> Partition:
    """Label-skewed split: client ``i`` draws its class mix from ``Dir(alpha * p)``.

    ``p`` is uniform over the classes present. Samples are taken without
    replacement; a draw that hits an exhausted class is redrawn among the
    classes that still have examples, in proportion to the client's mix.
    ``alpha == 0`` gives each client a single class whenever the class counts
    allow it.
    """
    labels = np.asarray(labels).reshape(-1)
    n = len(labels)
    _check_feasible(n, K)
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    N = len(classes)
    pools = [list(rng.permutation(np.flatnonzero(labels == c))) for c in classes]
    remaining = np.array([len(p) for p in pools], dtype=np.int64)
    quotas = _quotas(n, K)

    clients = []
    for i in range(K):
        quota = int(quotas[i])
        if alpha == 0:
            # one-hot mix; prefer a class that can fill the whole quota
            full = np.flatnonzero(remaining >= quota)
            cand = full if len(full) else np.flatnonzero(remaining > 0)
            q = np.zeros(N)
            q[cand[rng.integers(len(cand))]] = 1.0
        else:
            q = rng.dirichlet(np.full(N, alpha / N))
        mine = []
        for c in rng.choice(N, size=quota, p=q):
            if remaining[c] == 0:
                avail = remaining > 0
                w = q * avail
                if w.sum() > 0:
                    c = rng.choice(N, p=w / w.sum())
                else:
                    c = rng.choice(np.flatnonzero(avail))
            mine.append(pools[c][len(pools[c]) - remaining[c]])
            remaining[c] -= 1
        clients.append(np.sort(np.asarray(mine, dtype=np.int64)))
    return Partition(clients)


def local_batches(n_local: int, batch_size: Optional[int], steps: int, rng) -> List[np.ndarray]:
    """Positions (into a client's local index list) for each of ``steps`` local steps.

    The local order is reshuffled with ``rng`` and cut into consecutive slices,
    keeping the short tail slice; a fresh shuffle starts whenever the slices
    run out. ``batch_size=None`` (or >= ``n_local``) means full-batch steps.
    """
    if batch_size is None or batch_size >= n_local:
        full = np.arange(n_local)
        return [full] * steps
    out: List[np.ndarray] = []
    while len(out) < steps:
        perm = rng.permutation(n_local)
        for start in range(0, n_local, batch_size):
            out.append(perm[start : start + batch_size])
            if len(out) == steps:
                break
    return out


def label_histogram(labels, indices, n_classes: int) -> np.ndarray:
    return np.bincount(np.asarray(labels)[indices], minlength=n_classes)
