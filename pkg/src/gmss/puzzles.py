"""Spatial and frequency jigsaw transforms and the permutation-set selector."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DimensionError, FormatError

BANDS = ("delta", "theta", "alpha", "beta", "gamma")


@dataclass(frozen=True)
class BlockPartition:
    """Ordered brain regions, each a tuple of channel indices."""

    blocks: tuple[tuple[str, tuple[int, ...]], ...]

    def __post_init__(self):
        idx = [i for _, members in self.blocks for i in members]
        if sorted(idx) != list(range(len(idx))):
            raise ContractError("partition blocks must cover 0..n-1 exactly once")

    @property
    def n(self) -> int:
        return sum(len(m) for _, m in self.blocks)

    @property
    def m(self) -> int:
        return len(self.blocks)

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.blocks]

    @property
    def sizes(self) -> list[int]:
        return [len(m) for _, m in self.blocks]

    def spatial_rows(self, perm) -> np.ndarray:
        """Source row for every output row when block ``perm[i]`` goes to slot ``i``."""
        perm = _check_perm(perm, self.m)
        return np.concatenate([np.asarray(self.blocks[p][1], dtype=np.intp) for p in perm])


def _check_perm(perm, m: int) -> np.ndarray:
    perm = np.asarray(perm, dtype=np.intp)
    if perm.shape != (m,):
        raise DimensionError(f"expected a permutation of length {m}, got shape {perm.shape}")
    if sorted(perm.tolist()) != list(range(m)):
        raise ContractError(f"expected a permutation of 0..{m - 1}, got {perm.tolist()}")
    return perm


def invert(perm) -> np.ndarray:
    return np.argsort(np.asarray(perm), kind="stable")


def hamming(p, q) -> int:
    """Number of positions where two permutations disagree."""
    if len(p) != len(q):
        raise ContractError(f"length mismatch: {len(p)} vs {len(q)}")
    return int(np.count_nonzero(np.asarray(p) != np.asarray(q)))


def min_pairwise_hamming(perms: np.ndarray) -> int:
    perms = np.asarray(perms)
    d = (perms[:, None, :] != perms[None, :, :]).sum(axis=2)
    d[np.diag_indices(len(perms))] = perms.shape[1] + 1
    return int(d.min())


@dataclass(frozen=True)
class PermutationSet:
    """k distinct permutations of 0..m-1; the label of ``perms[i]`` is ``i + 1``."""

    m: int
    k: int
    seed: int | None
    perms: np.ndarray

    def __post_init__(self):
        perms = np.asarray(self.perms)
        if perms.shape != (self.k, self.m):
            raise ContractError(f"perms shape {perms.shape} != ({self.k}, {self.m})")
        for p in perms:
            _check_perm(p, self.m)
        if len({tuple(p) for p in perms.tolist()}) != self.k:
            raise ContractError("permutations are not distinct")

    def perm(self, label: int) -> np.ndarray:
        if not 1 <= label <= self.k:
            raise ContractError(f"label {label} outside 1..{self.k}")
        return self.perms[label - 1]

    def label_of(self, perm) -> int:
        hits = np.flatnonzero((self.perms == np.asarray(perm)).all(axis=1))
        if hits.size == 0:
            raise ContractError(f"{list(perm)} is not in the set")
        return int(hits[0]) + 1

    def to_json(self) -> str:
        return json.dumps({"m": self.m, "k": self.k, "seed": self.seed, "perms": self.perms.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "PermutationSet":
        try:
            doc = json.loads(text)
            return cls(int(doc["m"]), int(doc["k"]), doc["seed"], np.asarray(doc["perms"], dtype=np.intp))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad permutation-set file: {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "PermutationSet":
        return cls.from_json(Path(path).read_text())


def select_permutations(m: int, k: int, seed: int = 0, pool: int = 1000) -> PermutationSet:
    """Pick k permutations of 0..m-1 with large mutual Hamming distance.

    k == m! returns the whole group in lexicographic order.  Otherwise greedy
    farthest-point selection: start from the identity, then repeatedly add
    the candidate whose minimum distance to the chosen set is largest.
    Candidates are ``pool`` random unseen permutations, or every unseen
    permutation when m! is small enough to enumerate.
    """
    total = math.factorial(m)
    if not 1 <= k <= total:
        raise ContractError(f"k must lie in 1..{total} for m={m}, got {k}")
    if k == total:
        return PermutationSet(m, k, seed, np.array(list(itertools.permutations(range(m))), dtype=np.intp))

    rng = np.random.default_rng(seed)
    chosen = [tuple(range(m))]
    seen = set(chosen)
    everything = np.array(list(itertools.permutations(range(m))), dtype=np.intp) if total <= 5040 else None
    # running min distance from each enumerated candidate to the chosen set
    mind = (everything != np.arange(m)).sum(axis=1) if everything is not None else None
    chosen_arr = np.array(chosen, dtype=np.intp)
    while len(chosen) < k:
        if everything is not None:
            scores = np.where(mind > 0, mind, -1)
            best = everything[int(np.argmax(scores))]
            mind = np.minimum(mind, (everything != best).sum(axis=1))
        else:
            cands = []
            local = set()
            while len(cands) < pool:
                c = tuple(rng.permutation(m).tolist())
                if c not in seen and c not in local:
                    local.add(c)
                    cands.append(c)
            cand = np.array(cands, dtype=np.intp)
            dist = (cand[:, None, :] != chosen_arr[None, :, :]).sum(axis=2).min(axis=1)
            best = cand[int(np.argmax(dist))]
        chosen.append(tuple(best.tolist()))
        seen.add(chosen[-1])
        chosen_arr = np.array(chosen, dtype=np.intp)
    return PermutationSet(m, k, seed, chosen_arr)


def apply_spatial(X: np.ndarray, perm, part: BlockPartition) -> np.ndarray:
    """Concatenate the blocks of X in permuted order; works on (n, d) or (B, n, d)."""
    X = np.asarray(X)
    if X.ndim < 2 or X.shape[-2] != part.n:
        raise DimensionError(f"input has {X.shape[-2] if X.ndim >= 2 else 0} rows, partition covers {part.n}")
    return X[..., part.spatial_rows(perm), :]


def inverse_spatial(Y: np.ndarray, perm, part: BlockPartition) -> np.ndarray:
    """Undo ``apply_spatial(., perm, part)``.

    Blocks have unequal sizes, so the inverse is taken on the channel-level
    row map rather than by re-applying the inverse block order.
    """
    Y = np.asarray(Y)
    return Y[..., invert(part.spatial_rows(perm)), :]


def apply_frequency(X: np.ndarray, perm) -> np.ndarray:
    """Output column j is input column perm[j], for every channel."""
    X = np.asarray(X)
    perm = _check_perm(perm, X.shape[-1])
    return X[..., perm]


def random_puzzle(X: np.ndarray, pset: PermutationSet, kind: str, rng: np.random.Generator,
                  part: BlockPartition | None = None) -> tuple[np.ndarray, int]:
    label = int(rng.integers(pset.k)) + 1
    if kind == "spatial":
        if part is None or pset.m != part.m:
            raise ContractError("spatial puzzle needs a partition with one block per permuted element")
        return apply_spatial(X, pset.perm(label), part), label
    if kind == "frequency":
        return apply_frequency(X, pset.perm(label)), label
    raise ContractError(f"unknown puzzle kind {kind!r}")


class PuzzleSampler:
    """Vectorised puzzle and view generation over a (B, n, d) batch."""

    def __init__(self, spatial: PermutationSet, frequency: PermutationSet, part: BlockPartition):
        if spatial.m != part.m:
            raise ContractError(f"spatial set permutes {spatial.m} blocks, partition has {part.m}")
        self.spatial = spatial
        self.frequency = frequency
        self.part = part
        self.rows = np.stack([part.spatial_rows(p) for p in spatial.perms])

    def spatial_batch(self, X: np.ndarray, labels: np.ndarray) -> np.ndarray:
        rows = self.rows[labels - 1]
        return np.take_along_axis(X, rows[:, :, None], axis=1)

    def frequency_batch(self, X: np.ndarray, labels: np.ndarray) -> np.ndarray:
        cols = self.frequency.perms[labels - 1]
        return np.take_along_axis(X, cols[:, None, :], axis=2)

    def puzzles(self, X: np.ndarray, kind: str, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        pset = self.spatial if kind == "spatial" else self.frequency
        labels = rng.integers(pset.k, size=len(X)) + 1
        if kind == "spatial":
            return self.spatial_batch(X, labels), labels
        return self.frequency_batch(X, labels), labels

    def views(self, X: np.ndarray, M: int, rng: np.random.Generator) -> np.ndarray:
        """M augmented views per sample, sample-major: row b*M + m is view m of sample b."""
        if M < 1:
            raise ContractError("M must be >= 1")
        B = len(X)
        s = rng.integers(self.spatial.k, size=(B, M)) + 1
        f = rng.integers(self.frequency.k, size=(B, M)) + 1
        rep = np.repeat(X, M, axis=0)
        return self.frequency_batch(self.spatial_batch(rep, s.reshape(-1)), f.reshape(-1))
