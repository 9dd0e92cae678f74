"""Electrode graph, Laplacian scaling and Chebyshev graph convolution."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .errors import ConfigError, ContractError, DimensionError, NumericError


@dataclass(frozen=True)
class ElectrodeGraph:
    names: tuple[str, ...]
    coords: np.ndarray
    adjacency: np.ndarray

    @property
    def n(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def is_connected(self) -> bool:
        if self.n == 0:
            return True
        seen = {0}
        frontier = [0]
        while frontier:
            i = frontier.pop()
            for j in np.flatnonzero(self.adjacency[i]):
                if j not in seen:
                    seen.add(int(j))
                    frontier.append(int(j))
        return len(seen) == self.n


def graph_from_edges(names, coords, edges) -> ElectrodeGraph:
    n = len(names)
    adj = np.zeros((n, n))
    for i, j in edges:
        if not (0 <= i < n and 0 <= j < n) or i == j:
            raise ConfigError(f"bad edge [{i}, {j}] for {n} electrodes")
        adj[i, j] = adj[j, i] = 1.0
    return ElectrodeGraph(tuple(names), np.asarray(coords, dtype=float).reshape(n, 2), adj)


def load_montage(path: str | Path | None = None) -> ElectrodeGraph:
    """Read a montage JSON (``electrodes: [{name, x, y}]``, ``edges: [[i, j]]``).

    Without ``path`` the bundled 62-electrode montage is used.  The graph must
    come out connected.
    """
    if path is None:
        text = resources.files("gmss.resources").joinpath("montage.json").read_text()
    else:
        text = Path(path).read_text()
    doc = json.loads(text)
    names = [e["name"] for e in doc["electrodes"]]
    if len(set(names)) != len(names):
        dup = next(n for n in names if names.count(n) > 1)
        raise ConfigError(f"electrode {dup} listed twice in montage")
    coords = [(e["x"], e["y"]) for e in doc["electrodes"]]
    graph = graph_from_edges(names, coords, doc["edges"])
    if not graph.is_connected():
        raise ConfigError("montage graph is not connected")
    return graph


def build_laplacian(graph: ElectrodeGraph | np.ndarray) -> np.ndarray:
    """Combinatorial Laplacian D - A."""
    adj = graph.adjacency if isinstance(graph, ElectrodeGraph) else np.asarray(graph, dtype=float)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise DimensionError(f"adjacency must be square, got {adj.shape}")
    if not np.array_equal(adj, adj.T):
        raise ContractError("adjacency is not symmetric")
    if np.any(adj < 0):
        raise ContractError("adjacency has negative entries")
    if np.any(np.diag(adj) != 0):
        raise ContractError("adjacency has a nonzero diagonal")
    return np.diag(adj.sum(axis=1)) - adj


def max_eigenvalue(L: np.ndarray, tol: float = 1e-9, max_iter: int = 10_000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    L = np.asarray(L, dtype=float)
    n = L.shape[0]
    if not np.any(L):
        return 0.0
    v = np.ones(n) / np.sqrt(n) + 1e-3 * np.arange(n)
    v /= np.linalg.norm(v)
    residual = np.inf
    for _ in range(max_iter):
        w = L @ v
        lam = float(v @ w)
        residual = np.linalg.norm(w - lam * v) / abs(lam) if lam != 0 else np.inf
        if residual < tol:
            return lam
        norm = np.linalg.norm(w)
        if norm == 0:
            # start vector fell in the null space; nudge off it
            w = np.roll(v, 1) - v
            norm = np.linalg.norm(w)
        v = w / norm
    raise NumericError(f"power iteration did not converge (residual {residual:.3e})")


@dataclass(frozen=True)
class ScaledLaplacian:
    L: np.ndarray
    lambda_max: float
    Ltilde: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.L.shape[0]

    def polynomials(self, K: int) -> list[np.ndarray]:
        if K not in self._cache:
            self._cache[K] = cheb_polynomials(self.Ltilde, K)
        return self._cache[K]


def scale_laplacian(L: np.ndarray, lambda_max: float) -> ScaledLaplacian:
    if not lambda_max > 0:
        raise ContractError(f"lambda_max must be positive, got {lambda_max}")
    L = np.asarray(L, dtype=float)
    return ScaledLaplacian(L, float(lambda_max), 2.0 * L / lambda_max - np.eye(L.shape[0]))


def scaled_laplacian(graph: ElectrodeGraph) -> ScaledLaplacian:
    L = build_laplacian(graph)
    return scale_laplacian(L, max_eigenvalue(L))


def cheb_polynomials(Lt: np.ndarray, K: int) -> list[np.ndarray]:
    """T_0 = I, T_1 = Lt, T_k = 2 Lt T_{k-1} - T_{k-2}."""
    if K < 1:
        raise ContractError("Chebyshev order K must be >= 1")
    n = Lt.shape[0]
    T = [np.eye(n)]
    if K > 1:
        T.append(np.array(Lt, dtype=float))
    for _ in range(2, K):
        T.append(2.0 * Lt @ T[-1] - T[-2])
    return T


@dataclass
class ChebFilter:
    betas: list[dc.Param]

    @property
    def K(self) -> int:
        return len(self.betas)

    @property
    def d_in(self) -> int:
        return self.betas[0].shape[0]

    @property
    def d_out(self) -> int:
        return self.betas[0].shape[1]

    @classmethod
    def init(cls, K: int, d_in: int, d_out: int, rng: np.random.Generator, prefix: str = "extractor"):
        bound = np.sqrt(6.0 / d_in)
        return cls([dc.Param(rng.uniform(-bound, bound, (d_in, d_out)), f"{prefix}.beta{k}") for k in range(K)])


def cheb_conv(X, SL: ScaledLaplacian, filt: ChebFilter, activation=dc.relu) -> dc.Tensor:
    """activation(sum_k T_k(Lt) X beta_k) for X of shape (n, d_in) or (B, n, d_in)."""
    X = dc._lift(X)
    if X.data.ndim < 2 or X.shape[-2] != SL.n:
        raise DimensionError(f"input has shape {X.shape}, graph has {SL.n} nodes")
    if X.shape[-1] != filt.d_in:
        raise DimensionError(f"input width {X.shape[-1]} != filter d_in {filt.d_in}")
    out = None
    for Tk, beta in zip(SL.polynomials(filt.K), filt.betas):
        term = X if out is None else dc.matmul(dc.Tensor(Tk), X)
        term = dc.matmul(term, beta)
        out = term if out is None else out + term
    return activation(out) if activation is not None else out
