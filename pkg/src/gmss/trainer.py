"""Adam, the two training modes, linear probing, protocols and metrics."""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import diffcore as dc
from .data import Arrays, load_partition
from .errors import ConfigError, ContractError, NumericError
from .graph import ScaledLaplacian, load_montage, scaled_laplacian
from .model import GmssModel, Head, TASKS, feature_extract, forward_multitask, total_loss
from .puzzles import PuzzleSampler, select_permutations

log = logging.getLogger(__name__)

METRICS_VERSION = 1


# --- optimizer ------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 8e-5
    no_decay: frozenset = frozenset()
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


_GRAD_LIMIT = math.sqrt(np.finfo(np.float64).max)  # larger |g| overflows g*g


def adam_step(params, grads, state: AdamState) -> None:
    """One Adam update with coupled L2 decay (g += wd * theta) on non-exempt params."""
    if len(params) != len(grads):
        raise ContractError("params and grads differ in length")
    for p, g in zip(params, grads):
        if g.shape != p.data.shape:
            raise ContractError(f"grad shape {g.shape} != param shape {p.data.shape} for {p.name}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {p.name}")
        if g.size and float(np.max(np.abs(g))) > _GRAD_LIMIT:
            raise NumericError(f"gradient for {p.name} overflows the second moment")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g in zip(params, grads):
        if state.weight_decay and p.name not in state.no_decay:
            g = g + state.weight_decay * p.data
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        tmp = np.multiply(g, 1.0 - state.beta1)
        m *= state.beta1
        m += tmp
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - state.beta2
        v *= state.beta2
        v += tmp
        # theta -= lr * (m / c1) / (sqrt(v / c2) + eps)
        np.divide(v, c2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += state.eps
        np.divide(m, tmp, out=tmp)
        tmp *= state.lr / c1
        p.data -= tmp


# --- configuration --------------------------------------------------------------

@dataclass
class TrainConfig:
    mode: str = "supervised"
    epochs: int = 200
    batch_size: int = 100
    M: int = 8
    tau: float = 0.5
    K: int = 2
    k_spatial: int = 128
    k_freq: int = 120
    d_out: int = 32
    proj_dim: int = 64
    lr: float = 1e-3
    weight_decay: float = 8e-5
    probe_epochs: int = 100
    perm_seed: int = 42
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("supervised", "unsupervised"):
            raise ConfigError(f"mode must be supervised or unsupervised, got {self.mode!r}")
        for name in ("epochs", "batch_size", "K", "k_spatial", "k_freq", "d_out", "proj_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.M < 2:
            raise ConfigError("M must be >= 2")
        if self.tau <= 0 or self.lr <= 0 or self.weight_decay < 0 or self.probe_epochs < 0:
            raise ConfigError("tau and lr must be positive, weight_decay and probe_epochs non-negative")

    @property
    def psi(self) -> int:
        return 1 if self.mode == "supervised" else 0

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Setup:
    """Fixed graph, partition and permutation sets shared by a run."""

    SL: ScaledLaplacian
    sampler: PuzzleSampler

    @classmethod
    def default(cls, config: TrainConfig, montage_path=None, partition_path=None) -> "Setup":
        montage = load_montage(montage_path)
        part = load_partition(partition_path, montage)
        spatial = select_permutations(part.m, config.k_spatial, config.perm_seed)
        freq = select_permutations(5, config.k_freq, config.perm_seed)
        return cls(scaled_laplacian(montage), PuzzleSampler(spatial, freq, part))


def new_model(config: TrainConfig, n_classes: int, n_nodes: int = 62) -> GmssModel:
    return GmssModel.init(n_classes, n_nodes=n_nodes, d_out=config.d_out, K=config.K,
                          k_spatial=config.k_spatial, k_freq=config.k_freq, proj_dim=config.proj_dim,
                          seed=config.seed)


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, size):
        yield order[start:start + size]


# --- training ---------------------------------------------------------------------

def train(data: Arrays, config: TrainConfig, model: GmssModel | None = None, setup: Setup | None = None,
          n_classes: int | None = None, callback=None) -> tuple[GmssModel, list[dict]]:
    """Optimise the multitask objective; returns the model and a per-epoch trace."""
    if len(data) == 0:
        raise ContractError("cannot train on an empty dataset")
    setup = setup or Setup.default(config)
    if model is None:
        model = new_model(config, n_classes or int(data.y.max()) + 1, data.X.shape[1])
    psi = config.psi
    tasks = TASKS if psi else ("s", "f", "p")
    params = model.parameters(tasks)
    state = AdamState(lr=config.lr, weight_decay=config.weight_decay,
                      no_decay=frozenset(model.log_vars[t].name for t in TASKS))
    rng = np.random.default_rng([config.seed, 1])
    trace = []
    for epoch in range(config.epochs):
        sums: dict[str, float] = {}
        seen = 0
        for idx in _batches(len(data), config.batch_size, rng):
            dc.zero_grad(params)
            losses = forward_multitask(data.X[idx], data.y[idx], model, setup.SL, setup.sampler, rng,
                                       psi, M=config.M, tau=config.tau)
            loss = total_loss(losses, model.log_vars)
            if not math.isfinite(loss.item()):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            dc.backward(loss)
            try:
                adam_step(params, [p.grad for p in params], state)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}: {exc}") from None
            row = dict(losses.values(), total=loss.item(), acc_s=losses.acc_s, acc_f=losses.acc_f)
            for key, val in row.items():
                sums[key] = sums.get(key, 0.0) + val * len(idx)
            seen += len(idx)
        entry = {"epoch": epoch, **{k: v / seen for k, v in sums.items()}}
        entry.update({f"log_var_{t}": model.log_vars[t].item() for t in tasks})
        trace.append(entry)
        if callback is not None:
            callback(entry)
        log.debug("epoch %d %s", epoch, entry)
    return model, trace


def extract(model: GmssModel, X: np.ndarray, SL: ScaledLaplacian, chunk: int = 500) -> np.ndarray:
    with dc.no_grad():
        return np.concatenate([feature_extract(X[i:i + chunk], SL, model).data for i in range(0, len(X), chunk)])


def pretext_accuracy(model: GmssModel, X: np.ndarray, setup: Setup, seed: int = 0) -> dict[str, float]:
    """Fraction of freshly drawn spatial / frequency puzzles the heads solve."""
    rng = np.random.default_rng([seed, 3])
    out = {}
    with dc.no_grad():
        for kind, head in (("spatial", "s"), ("frequency", "f")):
            xt, labels = setup.sampler.puzzles(X, kind, rng)
            logits = model.heads[head](feature_extract(xt, setup.SL, model)).data
            out[kind] = float(np.mean(np.argmax(logits, axis=1) + 1 == labels))
    return out


# --- metrics --------------------------------------------------------------------

@dataclass
class FoldResult:
    fold_id: str
    accuracy: float
    confusion: np.ndarray
    seconds: float | None = None


@dataclass
class Metrics:
    protocol: str
    mode: str
    folds: list[FoldResult]
    config_echo: dict = field(default_factory=dict)
    seed: int | None = None

    @property
    def mean_acc(self) -> float:
        return float(np.mean([f.accuracy for f in self.folds]))

    @property
    def std_acc(self) -> float:
        return float(np.std([f.accuracy for f in self.folds]))

    def to_doc(self, timing: bool = False) -> dict:
        return {
            "format_version": METRICS_VERSION,
            "protocol": self.protocol,
            "mode": self.mode,
            "folds": [{"fold_id": f.fold_id, "accuracy": f.accuracy, "confusion": f.confusion.tolist(),
                       "seconds": f.seconds if timing else None} for f in self.folds],
            "mean_acc": self.mean_acc,
            "std_acc": self.std_acc,
            "config_echo": self.config_echo,
            "seed": self.seed,
        }

    def to_json(self, timing: bool = False) -> str:
        return dumps_stable(self.to_doc(timing))


def dumps_stable(obj) -> str:
    """JSON with insertion-ordered keys and floats written to 17 significant digits."""
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {dumps_stable(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(dumps_stable(v) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format(float(obj), ".17g") if math.isfinite(obj) else "null"
    return json.dumps(obj)


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def predict(model: GmssModel, X: np.ndarray, SL: ScaledLaplacian, head: str = "auto") -> np.ndarray:
    """Argmax class per sample; ties go to the lowest index."""
    if head == "auto":
        head = "probe" if model.probe is not None else "c"
    layer = model.probe if head == "probe" else model.heads[head]
    if layer is None:
        raise ContractError("model has no probe layer")
    feats = extract(model, X, SL)
    with dc.no_grad():
        logits = layer(dc.Tensor(feats)).data
    return np.argmax(logits, axis=1)


def evaluate(model: GmssModel, test: Arrays, SL: ScaledLaplacian, head: str = "auto",
             fold_id: str = "0", n_classes: int | None = None) -> FoldResult:
    if len(test) == 0:
        raise ContractError("empty test set")
    n_classes = n_classes or (model.probe.out_width if head in ("auto", "probe") and model.probe else model.n_classes)
    pred = predict(model, test.X, SL, head)
    cm = confusion_matrix(test.y, pred, n_classes)
    return FoldResult(fold_id, float(np.trace(cm) / cm.sum()), cm)


def fit_linear(feats: np.ndarray, y: np.ndarray, n_classes: int, config: TrainConfig, seed: int) -> Head:
    """Softmax regression trained by Adam on fixed features."""
    rng = np.random.default_rng([seed, 2])
    probe = Head.init((feats.shape[1], n_classes), rng, "probe")
    params = probe.parameters()
    state = AdamState(lr=config.lr, weight_decay=config.weight_decay)
    for _ in range(config.probe_epochs):
        for idx in _batches(len(y), config.batch_size, rng):
            dc.zero_grad(params)
            dc.backward(dc.cross_entropy(probe(dc.Tensor(feats[idx])), y[idx]))
            adam_step(params, [p.grad for p in params], state)
    return probe


def linear_probe(model: GmssModel, train_set: Arrays, test_set: Arrays, config: TrainConfig,
                 SL: ScaledLaplacian, n_classes: int | None = None, fold_id: str = "0") -> FoldResult:
    """Freeze the extractor, fit one linear layer on its features, score the test set."""
    n_classes = n_classes or int(max(train_set.y.max(), test_set.y.max())) + 1
    start = time.perf_counter()
    model.probe = fit_linear(extract(model, train_set.X, SL), train_set.y, n_classes, config, config.seed)
    result = evaluate(model, test_set, SL, head="probe", fold_id=fold_id, n_classes=n_classes)
    result.seconds = time.perf_counter() - start
    return result


# --- protocols --------------------------------------------------------------------

SPLIT_PRESETS = {"seed": (9, 6), "seed-iv": (16, 8), "mped": (21, 7)}


@dataclass(frozen=True)
class SplitSpec:
    protocol: str
    train_trials: int | None = None
    test_trials: int | None = None

    def __post_init__(self):
        if self.protocol not in ("subject_dependent", "loso"):
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        if self.protocol == "subject_dependent" and (self.train_trials is None or self.test_trials is None):
            raise ConfigError("subject-dependent protocol needs train_trials and test_trials")

    @classmethod
    def for_dataset(cls, name: str, protocol: str = "subject_dependent") -> "SplitSpec":
        key = name.lower()
        if key not in SPLIT_PRESETS:
            raise ConfigError(f"no trial split preset for dataset {name!r}")
        return cls(protocol, *SPLIT_PRESETS[key])


@dataclass
class Fold:
    fold_id: str
    train: np.ndarray
    test: np.ndarray


def make_splits(data: Arrays, spec: SplitSpec) -> list[Fold]:
    folds = []
    if spec.protocol == "subject_dependent":
        need = spec.train_trials + spec.test_trials
        for subject in np.unique(data.subject):
            for session in np.unique(data.session[data.subject == subject]):
                scope = np.flatnonzero((data.subject == subject) & (data.session == session))
                trials = np.unique(data.trial[scope])
                if len(trials) < need:
                    raise ContractError(f"subject {subject} session {session} has {len(trials)} trials, "
                                        f"protocol needs {need}")
                in_train = np.isin(data.trial[scope], trials[:spec.train_trials])
                folds.append(Fold(f"subject{subject}-session{session}", scope[in_train], scope[~in_train]))
    else:
        subjects = np.unique(data.subject)
        if len(subjects) < 2:
            raise ContractError("leave-one-subject-out needs at least two subjects")
        for subject in subjects:
            held = data.subject == subject
            folds.append(Fold(f"subject{subject}", np.flatnonzero(~held), np.flatnonzero(held)))
    for f in folds:
        assert np.intersect1d(f.train, f.test).size == 0
    return folds


def fold_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([master, index]).generate_state(1)[0])


def run_fold(data: Arrays, fold: Fold, config: TrainConfig, n_classes: int, index: int) -> FoldResult:
    cfg = TrainConfig.from_dict({**config.to_dict(), "seed": fold_seed(config.seed, index)})
    setup = Setup.default(cfg)
    start = time.perf_counter()
    model, _ = train(data.take(fold.train), cfg, setup=setup, n_classes=n_classes)
    if cfg.mode == "unsupervised":
        result = linear_probe(model, data.take(fold.train), data.take(fold.test), cfg, setup.SL, n_classes,
                              fold.fold_id)
    else:
        result = evaluate(model, data.take(fold.test), setup.SL, head="c", fold_id=fold.fold_id)
    result.seconds = time.perf_counter() - start
    return result


def run_protocol(data: Arrays, spec: SplitSpec, config: TrainConfig, n_classes: int, jobs: int = 1) -> Metrics:
    """Train and score one model per fold."""
    folds = make_splits(data, spec)
    args = [(data, f, config, n_classes, i) for i, f in enumerate(folds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_fold, *zip(*args)))
    else:
        results = [run_fold(*a) for a in args]
    return Metrics(spec.protocol, config.mode, results, config.to_dict(), config.seed)
