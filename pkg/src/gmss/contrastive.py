"""View augmentation and the aggregated-positive contrastive loss."""
from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .errors import ContractError, DimensionError, NumericError
from .puzzles import BlockPartition, PermutationSet, apply_frequency, apply_spatial


def augment(X: np.ndarray, M: int, spatial_set: PermutationSet, freq_set: PermutationSet,
            rng: np.random.Generator, part: BlockPartition) -> list[np.ndarray]:
    """M views of X, each spatially then frequency permuted by independent uniform draws."""
    if M < 1:
        raise ContractError("M must be >= 1")
    views = []
    for _ in range(M):
        s = spatial_set.perm(int(rng.integers(spatial_set.k)) + 1)
        f = freq_set.perm(int(rng.integers(freq_set.k)) + 1)
        views.append(apply_frequency(apply_spatial(X, s, part), f))
    return views


def cosine_sim(u, v) -> float:
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu <= 1e-12 or nv <= 1e-12:
        raise NumericError("cosine similarity of a near-zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def _masks(N: int, M: int) -> tuple[np.ndarray, np.ndarray]:
    owner = np.repeat(np.arange(N), M)
    same = owner[:, None] == owner[None, :]
    pos = np.triu(same, k=1).astype(float)
    neg = (~same).astype(float)
    return pos, neg


def contrastive_loss(Z: dc.Tensor, N: int, M: int, tau: float = 0.5) -> dc.Tensor:
    """Mean over samples of -log(g+ / (g+ + g-)).

    ``Z`` holds N*M projection rows, sample-major.  For sample n, g+ sums
    exp(sim/tau) over its M(M-1)/2 view pairs and g- over all M*M*(N-1)
    pairings of its views with views of other samples.
    """
    if M < 2:
        raise ContractError("contrastive loss needs M >= 2 views per sample")
    if N < 1 or tau <= 0:
        raise ContractError("need N >= 1 and tau > 0")
    if Z.shape[0] != N * M or Z.data.ndim != 2:
        raise DimensionError(f"expected ({N * M}, D) projections, got {Z.shape}")
    pos, neg = _masks(N, M)
    zn = dc.l2_normalize(Z)
    e = dc.exp(dc.scale(zn @ zn.T, 1.0 / tau))
    # row sums grouped by owning sample
    g_pos = dc.sum(dc.reshape(dc.sum(dc.mul(e, pos), axis=1), (N, M)), axis=1)
    g_neg = dc.sum(dc.reshape(dc.sum(dc.mul(e, neg), axis=1), (N, M)), axis=1)
    per_sample = dc.log(g_pos + g_neg) - dc.log(g_pos)
    return dc.mean(per_sample)
