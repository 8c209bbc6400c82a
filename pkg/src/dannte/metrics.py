"""Regression metrics, embedding divergence and 2-D projection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ContractError, ShapeError

MAPE_FLOOR = 1e-9
VAR_FLOOR = 1e-6
KL_DIRECTION = "source||target"


def _pair(y_hat, y) -> tuple[np.ndarray, np.ndarray]:
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y_hat.shape != y.shape:
        raise ShapeError(f"prediction length {y_hat.size} != target length {y.size}")
    if y.size == 0:
        raise ContractError("empty inputs")
    return y_hat, y


def mse(y_hat, y) -> float:
    y_hat, y = _pair(y_hat, y)
    return float(np.mean((y_hat - y) ** 2))


def mape(y_hat, y) -> float:
    """Mean absolute percentage error as a fraction (0.1 == 10%)."""
    y_hat, y = _pair(y_hat, y)
    if np.any(np.abs(y) < MAPE_FLOOR):
        raise ContractError(f"MAPE undefined: |y| below {MAPE_FLOOR} in the reference values")
    return float(np.mean(np.abs(y_hat - y) / np.abs(y)))


class ConstantMean:
    """Predicts the mean of the source targets everywhere."""

    def __init__(self, source_y):
        y = np.asarray(source_y, dtype=np.float64).reshape(-1)
        if y.size == 0:
            raise ContractError("constant-mean model needs at least one source value")
        self.value = float(y.mean())

    def predict(self, seqs) -> np.ndarray:
        return np.full(len(seqs), self.value)


def constant_mean_model(source_y) -> ConstantMean:
    return ConstantMean(source_y)


def embedding_kl(source_emb, target_emb) -> float:
    """KL(source || target) between per-dimension Gaussian fits, summed over dimensions."""
    s = np.asarray(source_emb, dtype=np.float64)
    t = np.asarray(target_emb, dtype=np.float64)
    if s.ndim == 1:
        s = s[:, None]
    if t.ndim == 1:
        t = t[:, None]
    if len(s) < 2 or len(t) < 2:
        raise ContractError("embedding KL needs at least 2 vectors per domain")
    if s.shape[1] != t.shape[1]:
        raise ShapeError(f"embedding widths differ: {s.shape[1]} vs {t.shape[1]}")
    mu_s, mu_t = s.mean(axis=0), t.mean(axis=0)
    var_s = np.maximum(s.var(axis=0), VAR_FLOOR)
    var_t = np.maximum(t.var(axis=0), VAR_FLOOR)
    terms = 0.5 * np.log(var_t / var_s) + (var_s + (mu_s - mu_t) ** 2) / (2.0 * var_t) - 0.5
    return max(float(np.sum(terms)), 0.0)


@dataclass
class Projection:
    coords: np.ndarray  # (n, dims)
    components: np.ndarray  # (dims, H)
    variances: np.ndarray  # (dims,)
    mean: np.ndarray


def pca_project(embeddings, dims: int = 2, *, tol: float = 1e-9, seed: int = 0,
                max_iter: int = 20000) -> Projection:
    """Top principal axes by power iteration with deflation.

    Columns come out by decreasing variance; each axis is signed so its
    largest-magnitude loading is positive.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"embeddings must be (n, H), got {X.shape}")
    n, H = X.shape
    if n < dims or H < dims:
        raise ContractError(f"cannot extract {dims} components from {n} samples of width {H}")
    mean = X.mean(axis=0)
    Xc = X - mean
    C = Xc.T @ Xc / n
    scale = max(float(np.trace(C)), np.finfo(float).tiny)
    rng = np.random.default_rng(seed)
    comps, variances = [], []
    for _ in range(dims):
        v = _orthonormal_start(rng, H, comps)
        for _ in range(max_iter):
            w = C @ v
            for c in comps:
                w -= (c @ w) * c
            norm = np.linalg.norm(w)
            if norm <= 1e-12 * scale:
                break  # nothing left in the orthogonal complement
            w /= norm
            if w @ v < 0:
                w = -w
            done = np.linalg.norm(w - v) < tol
            v = w
            if done:
                break
        lam = float(v @ C @ v)
        if abs(v).max() > 0 and v[np.argmax(np.abs(v))] < 0:
            v = -v
        comps.append(v)
        variances.append(max(lam, 0.0))
        C = C - lam * np.outer(v, v)
    P = np.array(comps)
    return Projection(Xc @ P.T, P, np.array(variances), mean)


def _orthonormal_start(rng, H, comps) -> np.ndarray:
    v = rng.standard_normal(H)
    for c in comps:
        v -= (c @ v) * c
    return v / np.linalg.norm(v)


# --------------------------------------------------------------------------
# reports


@dataclass
class FoldMetrics:
    mse_source: float
    mse_target: float
    mape_target: float
    kl_divergence: float = math.nan


METRIC_NAMES = ("mse_source", "mse_target", "mape_target", "kl_divergence")


@dataclass
class MetricsReport:
    """Fold means with sample standard deviations (ddof=1) as dispersion."""

    folds: list[FoldMetrics] = field(default_factory=list)

    def values(self, name: str) -> np.ndarray:
        return np.array([getattr(f, name) for f in self.folds], dtype=np.float64)

    def mean(self, name: str) -> float:
        v = self.values(name)
        return float(np.mean(v)) if len(v) else math.nan

    def std(self, name: str) -> float:
        v = self.values(name)
        return float(np.std(v, ddof=1)) if len(v) > 1 else 0.0

    @property
    def mse_source(self) -> float:
        return self.mean("mse_source")

    @property
    def mse_target(self) -> float:
        return self.mean("mse_target")

    @property
    def mape_target(self) -> float:
        return self.mean("mape_target")

    @property
    def kl_divergence(self) -> float:
        return self.mean("kl_divergence")

    def as_dict(self) -> dict:
        out = {}
        for name in METRIC_NAMES:
            out[name] = self.mean(name)
            out[f"{name}_std"] = self.std(name)
        return out
