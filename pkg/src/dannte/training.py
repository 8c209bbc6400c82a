"""Adversarial training loop, Adam, and chronological k-fold evaluation.

Modes
-----
baseline          source-only batches, regressor loss only
fully_supervised  both domains labelled, regressor loss only
dann              both heads, i.i.d. shuffled half/half batches
dannte            both heads, chronological half/half batches
constant_mean     no training (k-fold only)
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Optional

import numpy as np

from . import layers as L
from .data import (
    Batch, StandardizationStats, WindowSet, build_equal_batches, build_source_batches,
    fit_stats, split_blocks, standardize,
)
from .errors import ContractError, NonFiniteError
from .metrics import ConstantMean, FoldMetrics, MetricsReport, embedding_kl, mape, mse
from .tensor import Tape

MODES = ("baseline", "fully_supervised", "dann", "dannte")
ADVERSARIAL = ("dann", "dannte")
READS_TARGET_LABELS = ("fully_supervised",)


@dataclass
class TrainConfig:
    lam: float = 1.5
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 32
    window: int = 16
    stride: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    folds: int = 5
    mode: str = "dannte"
    hidden_size: int = 32
    head_hidden: int = 16
    clip_norm: float = 5.0
    lambda_schedule: str = "constant"
    dann_extractor: str = "lstm"
    history_eval: bool = True

    def __post_init__(self):
        if self.mode not in MODES + ("constant_mean",):
            raise ContractError(f"unknown mode {self.mode!r}")
        if self.lam < 0:
            raise ContractError("lambda must be >= 0")
        if self.epochs < 1:
            raise ContractError("epochs must be >= 1")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ContractError("batch size must be even and >= 2")
        if self.folds < 2:
            raise ContractError("folds must be >= 2")
        if self.window < 1 or self.stride < 1:
            raise ContractError("window and stride must be >= 1")
        if self.lambda_schedule not in ("constant", "ganin"):
            raise ContractError(f"unknown lambda schedule {self.lambda_schedule!r}")
        if self.dann_extractor not in ("lstm", "feedforward"):
            raise ContractError(f"unknown DANN extractor {self.dann_extractor!r}")

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: type(getattr(cls(), f.name)) for f in fields(cls)}


# --------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "OptimizerState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: OptimizerState, lr: float = 1e-3, betas=(0.9, 0.999),
              eps: float = 1e-8) -> None:
    """Bias-corrected Adam, updating ``params`` and ``state`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name}")
        if g.shape != params[name].shape:
            raise ContractError(f"gradient shape {g.shape} != parameter {name} {params[name].shape}")
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def clip_group(grads: dict[str, np.ndarray], names, max_norm: float) -> float:
    """Scale the named gradients to a joint L2 norm of at most ``max_norm``."""
    names = list(names)
    norm = math.sqrt(sum(float(np.sum(grads[n] * grads[n])) for n in names))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for n in names:
            grads[n] = grads[n] * scale
    return norm


# --------------------------------------------------------------------------
# one step


@dataclass
class StepResult:
    l_y: float
    l_d: float
    l_tot: float
    domain_acc: float
    forward_passes: int
    backward_passes: int
    grads: dict = field(default_factory=dict, repr=False)


def lambda_at(cfg: TrainConfig, progress: float) -> float:
    if cfg.lambda_schedule == "ganin":
        return cfg.lam * (2.0 / (1.0 + math.exp(-10.0 * progress)) - 1.0)
    return cfg.lam


def train_step(model: L.DannteModel, batch: Batch, cfg: TrainConfig, opt: OptimizerState,
               lam: Optional[float] = None, *, apply: bool = True) -> StepResult:
    """One shared forward pass, one backward pass, one optimizer step.

    The domain head sits behind the reversal layer, so minimising
    ``L_y + L_d`` trains the domain head on ``L_d`` while the extractor
    receives ``dL_y - lam * dL_d``.
    """
    lam = model.lam if lam is None else lam
    adversarial = cfg.mode in ADVERSARIAL
    tape = Tape()
    params = L.bind(model, tape)
    fr = L.model_forward(model, batch.sequences, params, lam=lam, with_domain=adversarial)
    l_y = L.masked_mse(fr.y_hat, batch.targets, batch.source_mask)
    if adversarial:
        l_d = L.domain_bce(fr.d_prob, batch.domain_labels)
        loss = l_y + l_d
        acc = float(np.mean((fr.d_prob.values > 0.5) == (batch.domain_labels == 1)))
    else:
        l_d, loss, acc = None, l_y, math.nan
    if not math.isfinite(loss.item()):
        raise NonFiniteError(f"non-finite loss {loss.item()}")
    g_all = tape.backward(loss)
    grads = {name: g_all[t] for name, t in params.items()}
    task = [n for n in grads if not n.startswith("domain_head.")]
    clip_group(grads, task, cfg.clip_norm)
    clip_group(grads, [n for n in grads if n.startswith("domain_head.")], cfg.clip_norm)
    if apply:
        adam_step(model.parameters(), grads, opt, cfg.learning_rate,
                  (cfg.beta1, cfg.beta2), cfg.adam_eps)
    ly = l_y.item()
    ld = l_d.item() if l_d is not None else math.nan
    return StepResult(ly, ld, L.total_loss(ly, ld, lam) if l_d is not None else ly, acc,
                      tape.count("extract"), tape.backward_calls, grads)


# --------------------------------------------------------------------------
# full training


@dataclass
class HistoryRow:
    epoch: int
    l_y: float
    l_d: float
    l_tot: float
    domain_acc: float
    seconds: float


HISTORY_HEADER = "epoch,L_y,L_d,L_tot,domain_acc,seconds"


@dataclass
class TrainResult:
    model: L.DannteModel
    stats: StandardizationStats
    history: list[HistoryRow]
    config: TrainConfig


def epoch_batches(cfg: TrainConfig, source: WindowSet, target: Optional[WindowSet],
                  rng: np.random.Generator) -> list[Batch]:
    if cfg.mode == "baseline":
        return build_source_batches(source, cfg.batch_size // 2)
    if cfg.mode == "fully_supervised":
        return build_equal_batches(source, target, cfg.batch_size, labelled_target=True)
    if cfg.mode == "dann":
        return build_equal_batches(source, target, cfg.batch_size, rng=rng)
    return build_equal_batches(source, target, cfg.batch_size)


def new_model(cfg: TrainConfig, n_features: int) -> L.DannteModel:
    extractor = cfg.dann_extractor if cfg.mode == "dann" else "lstm"
    return L.init_model(n_features, hidden_size=cfg.hidden_size, head_hidden=cfg.head_hidden,
                        lam=cfg.lam, seed=cfg.seed, extractor=extractor, window=cfg.window)


def evaluate_training_losses(model: L.DannteModel, source: WindowSet,
                             target: Optional[WindowSet], lam: float,
                             adversarial: bool) -> tuple[float, float, float, float]:
    """(L_y, L_d, L_tot, domain accuracy) over whole standardized training sets."""
    l_y = mse(L.predict(model, source.sequences), source._targets)
    if not adversarial:
        return l_y, math.nan, l_y, math.nan
    p = np.concatenate([L.domain_probabilities(model, source.sequences),
                        L.domain_probabilities(model, target.sequences)])
    lab = np.concatenate([np.zeros(len(source)), np.ones(len(target))])
    l_d = float(-np.mean(lab * np.log(p) + (1.0 - lab) * np.log(1.0 - p)))
    acc = float(np.mean((p > 0.5) == (lab == 1)))
    return l_y, l_d, l_y - lam * l_d, acc


def train(cfg: TrainConfig, source: WindowSet, target: Optional[WindowSet] = None,
          model: Optional[L.DannteModel] = None,
          on_epoch: Optional[Callable[[int, L.DannteModel, StandardizationStats], None]] = None
          ) -> TrainResult:
    """Fit scaling on ``source``, then train according to ``cfg.mode``.

    ``source`` and ``target`` are raw (unscaled) windows. Target labels are
    read only in ``fully_supervised`` mode; ``baseline`` ignores ``target``.
    ``on_epoch(epoch, model, stats)`` is called after every epoch.
    """
    if cfg.mode == "constant_mean":
        raise ContractError("constant_mean has no trainable parameters")
    if cfg.mode != "baseline" and target is None:
        raise ContractError(f"mode {cfg.mode} needs target windows")
    stats = fit_stats(source)
    src = standardize(stats, source)
    tgt = standardize(stats, target) if cfg.mode != "baseline" else None
    if model is None:
        model = new_model(cfg, source.n_features)
    opt = OptimizerState.for_params(model.parameters())
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(4)[3])
    adversarial = cfg.mode in ADVERSARIAL
    history = []
    total_steps = None
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        batches = epoch_batches(cfg, src, tgt, shuffle_rng)
        if total_steps is None:
            total_steps = len(batches) * cfg.epochs
        sums = np.zeros(4)
        for batch in batches:
            lam = lambda_at(cfg, step / total_steps)
            res = train_step(model, batch, cfg, opt, lam)
            sums += (res.l_y, res.l_d, res.l_tot, res.domain_acc)
            step += 1
        if cfg.history_eval:
            lam = lambda_at(cfg, step / total_steps)
            row = evaluate_training_losses(model, src, tgt, lam, adversarial)
        else:
            row = tuple(sums / len(batches))
        history.append(HistoryRow(epoch, *row, time.perf_counter() - t0))
        if on_epoch is not None:
            on_epoch(epoch, model, stats)
    return TrainResult(model, stats, history, cfg)


def history_csv(history: list[HistoryRow]) -> str:
    lines = [HISTORY_HEADER]
    for h in history:
        lines.append(f"{h.epoch},{h.l_y!r},{h.l_d!r},{h.l_tot!r},{h.domain_acc!r},{h.seconds:.6f}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# evaluation and k-fold


def evaluate(model, stats: StandardizationStats, source: WindowSet,
             target: WindowSet) -> FoldMetrics:
    """Held-out metrics: MSE on standardized y, MAPE on raw y, embedding KL."""
    s_x = stats.transform_features(source.sequences)
    t_x = stats.transform_features(target.sequences)
    if isinstance(model, ConstantMean):
        ys, yt = model.predict(s_x), model.predict(t_x)
        ys, yt = stats.transform_y(ys), stats.transform_y(yt)
        kl = math.nan
    else:
        ys, yt = L.predict(model, s_x), L.predict(model, t_x)
        kl = embedding_kl(L.embed(model, s_x), L.embed(model, t_x))
    t_y = target.targets
    return FoldMetrics(
        mse_source=mse(ys, stats.transform_y(source.targets)),
        mse_target=mse(yt, stats.transform_y(t_y)),
        mape_target=mape(stats.inverse_y(yt), t_y),
        kl_divergence=kl,
    )


@dataclass
class FoldResult:
    fold: int
    model: object
    stats: StandardizationStats
    metrics: FoldMetrics
    heldout_source: np.ndarray
    heldout_target: np.ndarray
    history: list = field(default_factory=list)


def fold_indices(n_source: int, n_target: int, k: int):
    """Per fold: (train_src, held_src, train_tgt, held_tgt) index arrays."""
    s_blocks, t_blocks = split_blocks(n_source, k), split_blocks(n_target, k)
    out = []
    for i in range(k):
        s_train = np.concatenate([b for j, b in enumerate(s_blocks) if j != i])
        t_train = np.concatenate([b for j, b in enumerate(t_blocks) if j != i])
        out.append((s_train, s_blocks[i], t_train, t_blocks[i]))
    return out


def _run_fold(args) -> FoldResult:
    cfg, source, target, i, (s_tr, s_ho, t_tr, t_ho) = args
    src_train, tgt_train = source.subset(s_tr), target.subset(t_tr)
    if cfg.mode == "constant_mean":
        stats = fit_stats(src_train)
        model, history = ConstantMean(src_train.targets), []
    else:
        res = train(cfg, src_train, tgt_train)
        model, stats, history = res.model, res.stats, res.history
    metrics = evaluate(model, stats, source.subset(s_ho), target.subset(t_ho))
    return FoldResult(i, model, stats, metrics, source.origin_index[s_ho],
                      target.origin_index[t_ho], history)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("DANNTE_THREADS", "1")))
    except ValueError:
        return 1


def kfold(cfg: TrainConfig, source: WindowSet, target: WindowSet,
          workers: Optional[int] = None) -> list[FoldResult]:
    """Contiguous-block cross-validation over both domains.

    Fold ``i`` holds out block ``i`` of each domain and trains on the rest.
    Folds may run in worker processes (``DANNTE_THREADS``); results come
    back in fold order and do not depend on the worker count.
    """
    splits = fold_indices(len(source), len(target), cfg.folds)
    jobs = [(cfg, source, target, i, sp) for i, sp in enumerate(splits)]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            return list(pool.map(_run_fold, jobs))
    return [_run_fold(j) for j in jobs]


def report(results: list[FoldResult]) -> MetricsReport:
    return MetricsReport([r.metrics for r in results])


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


def with_mode(cfg: TrainConfig, mode: str, **changes) -> TrainConfig:
    return replace(cfg, mode=mode, **changes)
