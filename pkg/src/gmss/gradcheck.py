"""Finite-difference checks over every differentiable op and the full objective."""
from __future__ import annotations

import contextlib
import time

import numpy as np

from . import diffcore as dc
from .contrastive import contrastive_loss
from .graph import ChebFilter, cheb_conv, graph_from_edges, load_montage, scaled_laplacian
from .model import GmssModel, Head, forward_multitask, total_loss
from .puzzles import PuzzleSampler, select_permutations

REPORT_VERSION = 1


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin + x, x)


def _weighted_sum(out: dc.Tensor, w: np.ndarray) -> dc.Tensor:
    return dc.sum(dc.mul(out, dc.Tensor(w)))


def op_cases(rng: np.random.Generator) -> dict:
    """name -> (fn, params) pairs on small random inputs."""
    cases = {}

    def unary(name, op, shape=(3, 4), positive=False):
        x = dc.Param(np.abs(_away_from_zero(rng, shape)) + 0.5 if positive else _away_from_zero(rng, shape), f"{name}.x")
        w = rng.normal(size=op(dc.Tensor(x.data)).shape)
        cases[name] = (lambda: _weighted_sum(op(x), w), [x])

    unary("relu", dc.relu)
    unary("exp", dc.exp)
    unary("log", dc.log, positive=True)
    unary("softmax", dc.softmax)
    unary("l2_normalize", dc.l2_normalize)
    unary("scale", lambda t: dc.scale(t, -1.7))
    unary("add_scalar", lambda t: dc.add_scalar(t, 0.3))
    unary("transpose", dc.transpose)
    unary("reshape", lambda t: dc.reshape(t, (2, 6)))
    unary("sum_axis", lambda t: dc.sum(t, axis=1))
    unary("mean", dc.mean)

    a = dc.Param(rng.normal(size=(2, 3)), "matmul.a")
    b = dc.Param(rng.normal(size=(3, 4)), "matmul.b")
    w = rng.normal(size=(2, 4))
    cases["matmul"] = (lambda: _weighted_sum(a @ b, w), [a, b])

    xb = dc.Param(rng.normal(size=(3, 4, 2)), "bmatmul.x")
    wb = dc.Param(rng.normal(size=(2, 5)), "bmatmul.w")
    w2 = rng.normal(size=(3, 4, 5))
    cases["batched_matmul"] = (lambda: _weighted_sum(xb @ wb, w2), [xb, wb])

    p = dc.Param(rng.normal(size=(3, 4)), "add.a")
    q = dc.Param(rng.normal(size=(1, 4)), "add.b")
    w3 = rng.normal(size=(3, 4))
    cases["add_broadcast"] = (lambda: _weighted_sum(p + q, w3), [p, q])
    cases["sub"] = (lambda: _weighted_sum(p - q, w3), [p, q])
    cases["mul"] = (lambda: _weighted_sum(dc.mul(p, q), w3), [p, q])

    c1 = dc.Param(rng.normal(size=(2, 3)), "concat.a")
    c2 = dc.Param(rng.normal(size=(4, 3)), "concat.b")
    w4 = rng.normal(size=(6, 3))
    cases["concat"] = (lambda: _weighted_sum(dc.concat([c1, c2]), w4), [c1, c2])

    logits = dc.Param(rng.normal(size=(5, 7)), "cross_entropy.logits")
    labels = rng.integers(7, size=5)
    cases["cross_entropy"] = (lambda: dc.cross_entropy(logits, labels), [logits])

    # Chebyshev convolution on a 6-node ring, K = 3
    ring = graph_from_edges([f"n{i}" for i in range(6)], np.zeros((6, 2)), [(i, (i + 1) % 6) for i in range(6)])
    SL = scaled_laplacian(ring)
    filt = ChebFilter.init(3, 4, 5, rng, prefix="cheb")
    X = dc.Param(rng.normal(size=(2, 6, 4)), "cheb.X")
    w5 = rng.normal(size=(2, 6, 5))
    cases["cheb_conv"] = (lambda: _weighted_sum(cheb_conv(X, SL, filt), w5), [X, *filt.betas])

    head = Head.init((6, 5, 4, 3), rng, "head")
    for layer_param in head.parameters():
        if layer_param.name.endswith("bias"):
            # zero biases put dead-input units exactly on the ReLU kink
            layer_param.data[...] = rng.normal(scale=0.5, size=layer_param.data.shape)
    hx = dc.Param(rng.normal(size=(4, 6)), "head.x")
    w6 = rng.normal(size=(4, 3))
    cases["head"] = (lambda: _weighted_sum(head(hx), w6), [hx, *head.parameters()])

    Z = dc.Param(rng.normal(size=(3 * 4, 5)), "contrastive.Z")
    cases["contrastive_loss"] = (lambda: contrastive_loss(Z, 3, 4, 0.5), [Z])

    losses = [dc.Param(np.abs(rng.normal(size=(1, 1))) + 0.1, f"total.L_{t}") for t in "sfpc"]
    log_vars = {t: dc.Param(rng.normal(scale=0.5, size=(1, 1)), f"total.log_var_{t}") for t in "sfpc"}

    def total():
        from .model import TaskLosses
        return total_loss(TaskLosses(*losses, psi=1), log_vars)

    cases["total_loss"] = (total, [*losses, *log_vars.values()])
    return cases


def full_loss_case(seed: int, batch: int = 4, M: int = 8, psi: int = 1):
    """The complete multitask objective of a default-size model on a small synthetic batch."""
    rng = np.random.default_rng(seed)
    montage = load_montage()
    from .data import load_partition

    part = load_partition(montage=montage)
    sampler = PuzzleSampler(select_permutations(10, 128, 42), select_permutations(5, 120, 42), part)
    SL = scaled_laplacian(montage)
    model = GmssModel.init(3, seed=seed)
    for p in model.log_vars.values():
        p.data[...] = rng.normal(scale=0.3, size=(1, 1))
    X = rng.normal(size=(batch, 62, 5))
    y = rng.integers(3, size=batch)

    def fn():
        draw = np.random.default_rng([seed, 99])
        return total_loss(forward_multitask(X, y, model, SL, sampler, draw, psi, M=M), model.log_vars)

    return fn, model.parameters()


def run(seed: int = 0, tolerance: float = 1e-4, eps: float = 1e-4, fault: str | None = None,
        max_entries: int = 16) -> dict:
    """Check every op and the full loss; returns a JSON-ready report."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    checks = {}
    cases = op_cases(rng)
    cases["full_loss"] = full_loss_case(seed)
    for name, (fn, params) in cases.items():
        with dc.inject_fault(fault) if fault else contextlib.nullcontext():
            rep = dc.grad_check(fn, params, tolerance, eps, max_entries=max_entries, seed=seed)
        checks[name] = rep.to_dict()
    return {
        "format_version": REPORT_VERSION,
        "seed": seed,
        "tolerance": tolerance,
        "eps": eps,
        "fault": fault,
        "passed": all(c["passed"] for c in checks.values()),
        "checks": checks,
        "seconds": time.perf_counter() - start,
    }
