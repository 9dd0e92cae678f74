"""GMSS network: shared Chebyshev extractor, four MLP heads, uncertainty-weighted loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .contrastive import contrastive_loss
from .errors import ContractError, DimensionError
from .graph import ChebFilter, ScaledLaplacian, cheb_conv
from .puzzles import PuzzleSampler

HIDDEN = (512, 128)
TASKS = ("s", "f", "p", "c")


def _uniform(rng, fan_in, shape):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, shape)


@dataclass
class Head:
    """Fully connected stack with ReLU between layers and none on the output."""

    layers: list[tuple[dc.Param, dc.Param]]

    @classmethod
    def init(cls, widths, rng, prefix):
        layers = []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            w = dc.Param(_uniform(rng, a, (a, b)), f"{prefix}.fc{i}.weight")
            bias = dc.Param(np.zeros((1, b)), f"{prefix}.fc{i}.bias")
            layers.append((w, bias))
        return cls(layers)

    @property
    def in_width(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def out_width(self) -> int:
        return self.layers[-1][0].shape[1]

    def parameters(self):
        return [p for layer in self.layers for p in layer]

    def __call__(self, h: dc.Tensor) -> dc.Tensor:
        if h.shape[-1] != self.in_width:
            raise DimensionError(f"head expects width {self.in_width}, got {h.shape[-1]}")
        for i, (w, b) in enumerate(self.layers):
            h = h @ w + b
            if i < len(self.layers) - 1:
                h = dc.relu(h)
        return h


class GmssModel:
    def __init__(self, filt: ChebFilter, heads: dict[str, Head], log_vars: dict[str, dc.Param],
                 probe: Head | None = None):
        self.filter = filt
        self.heads = heads
        self.log_vars = log_vars
        self.probe = probe

    @classmethod
    def init(cls, n_classes: int, n_nodes: int = 62, d_in: int = 5, d_out: int = 32, K: int = 2,
             k_spatial: int = 128, k_freq: int = 120, proj_dim: int = 64, hidden=HIDDEN,
             seed: int = 0) -> "GmssModel":
        rng = np.random.default_rng(seed)
        filt = ChebFilter.init(K, d_in, d_out, rng)
        width = n_nodes * d_out
        outs = {"s": k_spatial, "f": k_freq, "p": proj_dim, "c": n_classes}
        heads = {t: Head.init((width, *hidden, outs[t]), rng, f"head_{t}") for t in TASKS}
        log_vars = {t: dc.Param(np.zeros((1, 1)), f"log_var.{t}") for t in TASKS}
        return cls(filt, heads, log_vars)

    @property
    def n_nodes(self) -> int:
        return self.heads["s"].in_width // self.filter.d_out

    @property
    def n_classes(self) -> int:
        return self.heads["c"].out_width

    def parameters(self, tasks=TASKS, include_probe: bool = False) -> list[dc.Param]:
        params = list(self.filter.betas)
        for t in tasks:
            params += self.heads[t].parameters()
        params += [self.log_vars[t] for t in tasks]
        if include_probe and self.probe is not None:
            params += self.probe.parameters()
        return params

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.parameters(include_probe=True)}

    @classmethod
    def from_state_dict(cls, state: dict[str, np.ndarray]) -> "GmssModel":
        state = {name: np.array(arr, dtype=np.float64) for name, arr in state.items()}
        try:
            K = sum(1 for name in state if name.startswith("extractor.beta"))
            betas = [dc.Param(state[f"extractor.beta{k}"], f"extractor.beta{k}") for k in range(K)]
            heads = {t: _head_from_state(state, f"head_{t}") for t in TASKS}
            log_vars = {t: dc.Param(state[f"log_var.{t}"], f"log_var.{t}") for t in TASKS}
        except KeyError as exc:
            raise ContractError(f"checkpoint lacks parameter {exc}") from None
        probe = _head_from_state(state, "probe") if "probe.fc0.weight" in state else None
        if K == 0:
            raise ContractError("checkpoint has no extractor weights")
        return cls(ChebFilter(betas), heads, log_vars, probe)

    def features(self, X, SL: ScaledLaplacian) -> dc.Tensor:
        return feature_extract(X, SL, self)


def _head_from_state(state, prefix) -> Head:
    layers = []
    i = 0
    while f"{prefix}.fc{i}.weight" in state:
        layers.append((dc.Param(state[f"{prefix}.fc{i}.weight"], f"{prefix}.fc{i}.weight"),
                       dc.Param(state[f"{prefix}.fc{i}.bias"], f"{prefix}.fc{i}.bias")))
        i += 1
    if not layers:
        raise KeyError(f"{prefix}.fc0.weight")
    return Head(layers)


def feature_extract(X, SL: ScaledLaplacian, model: GmssModel) -> dc.Tensor:
    """Chebyshev convolution flattened channel-major: (n, d) -> (1, n*d_out), (B, n, d) -> (B, n*d_out)."""
    X = dc._lift(X)
    if X.shape[-2] != model.n_nodes:
        raise DimensionError(f"input has {X.shape[-2]} channels, model expects {model.n_nodes}")
    h = cheb_conv(X, SL, model.filter)
    batch = h.shape[0] if h.data.ndim == 3 else 1
    return dc.reshape(h, (batch, h.shape[-2] * h.shape[-1]))


def head_forward(h: dc.Tensor, head: Head) -> dc.Tensor:
    return head(h)


def puzzle_loss(logits: dc.Tensor, labels) -> dc.Tensor:
    """Mean cross-entropy against 1-based pseudo labels."""
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    k = logits.shape[-1]
    if labels.size and (labels.min() < 1 or labels.max() > k):
        raise ContractError(f"pseudo label outside 1..{k}")
    return dc.cross_entropy(logits, labels - 1)


@dataclass
class TaskLosses:
    L_s: dc.Tensor
    L_f: dc.Tensor
    L_p: dc.Tensor
    L_c: dc.Tensor
    psi: int
    acc_s: float = float("nan")
    acc_f: float = float("nan")

    def __post_init__(self):
        if self.psi not in (0, 1):
            raise ContractError(f"psi must be 0 or 1, got {self.psi}")

    def values(self) -> dict[str, float]:
        out = {"L_s": self.L_s.item(), "L_f": self.L_f.item(), "L_p": self.L_p.item()}
        if self.psi:
            out["L_c"] = self.L_c.item()
        return out


def total_loss(t: TaskLosses, log_vars: dict[str, dc.Tensor]) -> dc.Tensor:
    """Uncertainty-weighted sum with s = log(sigma^2) per task.

    e^-s_s L_s + e^-s_f L_f + e^-s_p L_p / 2 + (s_s + s_f + s_p) / 2
    plus, when psi = 1, e^-s_c L_c + s_c / 2.
    """
    s = log_vars
    loss = (dc.mul(dc.exp(-s["s"]), t.L_s) + dc.mul(dc.exp(-s["f"]), t.L_f)
            + dc.scale(dc.mul(dc.exp(-s["p"]), t.L_p), 0.5)
            + dc.scale(s["s"] + s["f"] + s["p"], 0.5))
    if t.psi:
        loss = loss + dc.mul(dc.exp(-s["c"]), t.L_c) + dc.scale(s["c"], 0.5)
    return loss


def _accuracy(logits: dc.Tensor, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits.data, axis=1) + 1 == labels))


def forward_multitask(X: np.ndarray, y: np.ndarray | None, model: GmssModel, SL: ScaledLaplacian,
                      sampler: PuzzleSampler, rng: np.random.Generator, psi: int,
                      M: int = 8, tau: float = 0.5) -> TaskLosses:
    """All task losses for one batch of untransformed samples X (B, n, d).

    Spatial puzzles feed the spatial head, frequency puzzles the frequency
    head, M views per sample the projection head, and (psi = 1) the
    originals the classification head.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 3 or len(X) == 0:
        raise ContractError(f"expected a nonempty (B, n, d) batch, got shape {X.shape}")
    xs, ys = sampler.puzzles(X, "spatial", rng)
    xf, yf = sampler.puzzles(X, "frequency", rng)
    views = sampler.views(X, M, rng)

    logits_s = model.heads["s"](feature_extract(xs, SL, model))
    logits_f = model.heads["f"](feature_extract(xf, SL, model))
    z = model.heads["p"](feature_extract(views, SL, model))
    L_s = puzzle_loss(logits_s, ys)
    L_f = puzzle_loss(logits_f, yf)
    L_p = contrastive_loss(z, len(X), M, tau)
    if psi:
        if y is None:
            raise ContractError("supervised mode needs labels")
        L_c = dc.cross_entropy(model.heads["c"](feature_extract(X, SL, model)), np.asarray(y, dtype=np.int64))
    else:
        L_c = dc.Tensor(0.0)
    return TaskLosses(L_s, L_f, L_p, L_c, psi, _accuracy(logits_s, ys), _accuracy(logits_f, yf))
