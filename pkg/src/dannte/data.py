"""Series generation and ingestion, windowing, source-fitted scaling, and
batch construction.

Domain label 0 is the source domain (labelled), 1 the target domain.
Target labels travel with the windows for evaluation only; every read
goes through :attr:`WindowSet.targets`, which counts accesses so training
code can prove it never looked.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .errors import ContractError, DataError

SOURCE, TARGET = 0, 1
DOMAINS = {"source": SOURCE, "target": TARGET}


@dataclass
class TimeSeries:
    timestamps: np.ndarray  # (T,) int64, strictly increasing
    features: np.ndarray  # (T, F)
    target: np.ndarray  # (T,)
    domain: str = "source"

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)
        if self.domain not in DOMAINS:
            raise DataError(f"domain must be 'source' or 'target', got {self.domain!r}")
        n = len(self.timestamps)
        if self.features.ndim != 2 or self.features.shape[0] != n or self.target.shape != (n,):
            raise DataError(
                f"length mismatch: {n} timestamps, features {self.features.shape}, "
                f"target {self.target.shape}"
            )
        if n > 1 and np.any(np.diff(self.timestamps) <= 0):
            row = int(np.argmax(np.diff(self.timestamps) <= 0)) + 2
            raise DataError(f"timestamps not strictly increasing at row {row}")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.target))):
            raise DataError("series contains non-finite values")

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


# --------------------------------------------------------------------------
# synthetic generator


@dataclass
class ShiftConfig:
    """Synthetic plant with a seasonal (ambient) driver and an operating load.

    Each domain is driven by two latent processes: the load ``u`` (a shared
    duty cycle plus AR(1) noise, identically distributed in both domains)
    and the ambient condition ``a`` (a slow AR(1) with mean 0 in the source
    and ``delta`` in the target). Sensor channels are fixed smooth functions
    of both latents plus white noise; the ambient effect on the load-side
    channels switches on softly above ``ambient_onset``, so it is faint in
    the source and dominant in a shifted target. ``y`` is a fixed function
    of the observed channels, so only ``P(x)`` moves between domains.
    """

    n_points: int = 2015
    n_features: int = 6
    delta: float = 2.5
    noise: float = 0.05
    seed: int = 0
    ambient_phi: float = 0.98
    ambient_onset: float = 1.5
    ambient_gain: float = 1.0
    load_phi: float = 0.9
    load_period: int = 48
    load_noise: float = 0.5
    load_sensor_noise: float = 0.3
    y_offset: float = 10.0
    y_load: float = 1.0
    y_cross: float = 0.5
    y_noise: float = 0.02

    def __post_init__(self):
        if self.n_points < 2:
            raise ContractError("n_points must be >= 2")
        if self.n_features < 3:
            raise ContractError("n_features must be >= 3 (load, mixed and ambient channels)")
        if min(self.noise, self.y_noise, self.load_noise, self.load_sensor_noise) < 0:
            raise ContractError("noise levels must be >= 0")
        if not 0 <= self.ambient_phi < 1 or not 0 <= self.load_phi < 1:
            raise ContractError("AR coefficients must lie in [0, 1)")
        if self.load_period < 2:
            raise ContractError("load_period must be >= 2")


def _ar1(rng: np.random.Generator, n: int, phi: float, mean: float, std: float) -> np.ndarray:
    eps = rng.standard_normal(n)
    out = np.empty(n)
    out[0] = mean + std * eps[0]
    scale = std * math.sqrt(1.0 - phi * phi)
    for t in range(1, n):
        out[t] = mean + phi * (out[t - 1] - mean) + scale * eps[t]
    return out


def _softplus(z):
    return np.logaddexp(0.0, z)


def ambient_effect(a, cfg: ShiftConfig):
    """Heat-soak term added to load-side channels; ~0 below the onset."""
    return cfg.ambient_gain * _softplus(np.asarray(a) - cfg.ambient_onset)


# (load term, ambient term) per channel; channels past the table repeat it with
# a growing load scale. Channel 0 is the noisy load sensor, 1 the ambient-
# contaminated load channel, 2 the ambient sensor.
_CHANNELS = (
    (lambda u: u, lambda a, c: 0.0 * a),
    (lambda u: u, lambda a, c: ambient_effect(a, c)),
    (lambda u: 0.0 * u, lambda a, c: a),
    (lambda u: np.sin(u), lambda a, c: 0.5 * ambient_effect(a, c)),
    (lambda u: 0.5 * u * u, lambda a, c: 0.3 * a),
    (lambda u: np.tanh(0.5 * u), lambda a, c: 0.5 * a),
)


def _channels(u: np.ndarray, a: np.ndarray, cfg: ShiftConfig, rng) -> np.ndarray:
    cols = []
    for k in range(cfg.n_features):
        load_fn, amb_fn = _CHANNELS[k % len(_CHANNELS)]
        scale = 1.0 + 0.25 * (k // len(_CHANNELS))
        sigma = cfg.load_sensor_noise if k == 0 else cfg.noise
        cols.append(scale * load_fn(u) + amb_fn(a, cfg) + sigma * rng.standard_normal(len(u)))
    return np.column_stack(cols)


def target_function(x: np.ndarray, cfg: ShiftConfig) -> np.ndarray:
    """Noise-free ``y`` as a function of the observed channels.

    Uses the load channel corrected by the ambient sensor reading; the
    correction is identical in both domains.
    """
    load = x[:, 1] - ambient_effect(x[:, 2], cfg)
    return cfg.y_offset + cfg.y_load * load + cfg.y_cross * np.tanh(load) * load


def _generate_domain(cfg: ShiftConfig, domain: str, rng: np.random.Generator,
                     start: int) -> TimeSeries:
    n = cfg.n_points
    mean = 0.0 if domain == "source" else cfg.delta
    phase = 2.0 * np.pi * np.arange(n) / cfg.load_period
    u = np.sin(phase) + _ar1(rng, n, cfg.load_phi, 0.0, cfg.load_noise)
    a = _ar1(rng, n, cfg.ambient_phi, mean, 1.0)
    x = _channels(u, a, cfg, rng)
    y = target_function(x, cfg) + cfg.y_noise * rng.standard_normal(n)
    return TimeSeries(np.arange(start, start + n, dtype=np.int64), x, y, domain)


def generate_synthetic(cfg: ShiftConfig) -> tuple[TimeSeries, TimeSeries]:
    """Source and target series; deterministic given ``cfg.seed``.

    Both domains follow the same duty-cycle phase (local tick 0 is phase 0);
    the target's timestamps continue after the source's.
    """
    rs, rt = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(2))
    src = _generate_domain(cfg, "source", rs, 0)
    tgt = _generate_domain(cfg, "target", rt, cfg.n_points)
    return src, tgt


# --------------------------------------------------------------------------
# file format: header "timestamp,f0,...,f{F-1},y"


def write_series(path, ts: TimeSeries) -> None:
    path = Path(path)
    header = ["timestamp"] + [f"f{k}" for k in range(ts.n_features)] + ["y"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for t, row, y in zip(ts.timestamps, ts.features, ts.target):
            writer.writerow([str(int(t))] + [repr(float(v)) for v in row] + [repr(float(y))])


def load_series(path, domain: str = "source") -> TimeSeries:
    """Parse a series file; errors cite 1-based data row numbers."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        n_feat = len(header) - 2
        expected = ["timestamp"] + [f"f{k}" for k in range(n_feat)] + ["y"]
        if n_feat < 1 or header != expected:
            missing = [c for c in ("timestamp", "f0", "y") if c not in header]
            detail = f"missing columns {missing}" if missing else f"got {header}"
            raise DataError(f"{path}: header must be timestamp,f0..f<F-1>,y; {detail}")
        stamps, rows, bad = [], [], []
        for rowno, rec in enumerate(reader, start=1):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}: row {rowno} has {len(rec)} fields, expected {len(header)}")
            try:
                stamp = int(rec[0])
                vals = [float(v) for v in rec[1:]]
            except ValueError as exc:
                raise DataError(f"{path}: row {rowno} does not parse ({exc})") from None
            if not all(math.isfinite(v) for v in vals):
                bad.append(rowno)
            if stamps and stamp <= stamps[-1]:
                raise DataError(f"{path}: timestamp not strictly increasing at row {rowno}")
            stamps.append(stamp)
            rows.append(vals)
    if bad:
        raise DataError(f"{path}: non-finite values in rows {bad}")
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.array(rows, dtype=np.float64)
    return TimeSeries(np.array(stamps, dtype=np.int64), arr[:, :-1], arr[:, -1], domain)


# --------------------------------------------------------------------------
# windows


class LabelAccess:
    """Counter shared by every window set derived from one labelled origin."""

    def __init__(self):
        self.reads = 0


@dataclass
class WindowedSample:
    sequence: np.ndarray
    target: float
    domain_label: int
    origin_index: int


class WindowSet:
    """Array-backed collection of equal-length windows.

    ``sequences`` is (n, W, F); ``origin_index`` holds the series position
    of each window's last step; ``domain_labels`` is per row.
    """

    def __init__(self, sequences, targets, domain_labels, origin_index,
                 access: Optional[LabelAccess] = None):
        self.sequences = np.asarray(sequences, dtype=np.float64)
        self._targets = np.asarray(targets, dtype=np.float64)
        self.domain_labels = np.asarray(domain_labels, dtype=np.int64)
        self.origin_index = np.asarray(origin_index, dtype=np.int64)
        self.access = access if access is not None else LabelAccess()
        n = len(self.sequences)
        if self.sequences.ndim != 3 or not (
            len(self._targets) == len(self.domain_labels) == len(self.origin_index) == n
        ):
            raise DataError("window set arrays disagree in length")
        if not np.all((self.domain_labels == SOURCE) | (self.domain_labels == TARGET)):
            raise DataError("domain labels must be 0 or 1")

    def __len__(self) -> int:
        return len(self.sequences)

    def __iter__(self) -> Iterator[WindowedSample]:
        for k in range(len(self)):
            yield self[k]

    def __getitem__(self, k) -> WindowedSample:
        self.access.reads += 1
        return WindowedSample(self.sequences[k], float(self._targets[k]),
                              int(self.domain_labels[k]), int(self.origin_index[k]))

    @property
    def targets(self) -> np.ndarray:
        self.access.reads += 1
        return self._targets

    @property
    def window(self) -> int:
        return self.sequences.shape[1]

    @property
    def n_features(self) -> int:
        return self.sequences.shape[2]

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx)
        return WindowSet(self.sequences[idx], self._targets[idx], self.domain_labels[idx],
                         self.origin_index[idx], self.access)

    def with_arrays(self, sequences=None, targets=None) -> "WindowSet":
        return WindowSet(self.sequences if sequences is None else sequences,
                         self._targets if targets is None else targets,
                         self.domain_labels, self.origin_index, self.access)


def window(ts: TimeSeries, W: int, stride: int = 1) -> WindowSet:
    """Windows ``[t-W+1 .. t]`` for ``t = W-1, W-1+stride, ...``; target ``y_t``."""
    if W < 1 or stride < 1:
        raise ContractError("window length and stride must be >= 1")
    T = len(ts)
    if T < W:
        raise DataError(f"series of length {T} is shorter than window {W}")
    ends = np.arange(W - 1, T, stride)
    view = np.lib.stride_tricks.sliding_window_view(ts.features, W, axis=0)  # (T-W+1, F, W)
    seqs = np.ascontiguousarray(view[ends - (W - 1)].transpose(0, 2, 1))
    labels = np.full(len(ends), DOMAINS[ts.domain])
    return WindowSet(seqs, ts.target[ends], labels, ends)


# --------------------------------------------------------------------------
# standardization


@dataclass
class StandardizationStats:
    feature_mean: np.ndarray
    feature_std: np.ndarray
    y_mean: float
    y_std: float

    def transform_features(self, seqs: np.ndarray) -> np.ndarray:
        return (seqs - self.feature_mean) / self.feature_std

    def inverse_features(self, seqs: np.ndarray) -> np.ndarray:
        return seqs * self.feature_std + self.feature_mean

    def transform_y(self, y):
        return (np.asarray(y, dtype=np.float64) - self.y_mean) / self.y_std

    def inverse_y(self, y):
        return np.asarray(y, dtype=np.float64) * self.y_std + self.y_mean

    def arrays(self) -> dict[str, np.ndarray]:
        return {"feature_mean": self.feature_mean, "feature_std": self.feature_std,
                "y_mean": np.array([self.y_mean]), "y_std": np.array([self.y_std])}

    @classmethod
    def from_arrays(cls, arrs: dict) -> "StandardizationStats":
        return cls(np.asarray(arrs["feature_mean"]), np.asarray(arrs["feature_std"]),
                   float(arrs["y_mean"][0]), float(arrs["y_std"][0]))


def fit_stats(source: WindowSet) -> StandardizationStats:
    """Per-channel mean/std over every window entry, and y mean/std (ddof=0)."""
    if len(source) < 2:
        raise ContractError("need at least 2 source windows to fit scaling")
    if np.any(source.domain_labels != SOURCE):
        raise ContractError("scaling statistics must be fitted on source windows only")
    flat = source.sequences.reshape(-1, source.n_features)
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    const = [k for k in range(len(std)) if not std[k] > 0]
    if const:
        raise DataError(f"constant channel(s) f{const[0]}" + "".join(f", f{k}" for k in const[1:]))
    y = source.targets
    y_std = float(y.std())
    if not y_std > 0:
        raise DataError("target y is constant on the source windows")
    return StandardizationStats(mean, std, float(y.mean()), y_std)


def standardize(stats: StandardizationStats, samples: WindowSet) -> WindowSet:
    """Scale features and y; y is rescaled without counting as a label read."""
    return samples.with_arrays(stats.transform_features(samples.sequences),
                               stats.transform_y(samples._targets))


# --------------------------------------------------------------------------
# batches


@dataclass
class Batch:
    sequences: np.ndarray  # (B, W, F)
    targets: np.ndarray  # (B,)
    domain_labels: np.ndarray  # (B,)
    source_mask: np.ndarray  # (B,) 1.0 on rows whose labels enter L_y
    origin_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.targets)


def chunk_starts(n: int, half: int) -> list[int]:
    """Starts of consecutive ``half``-long runs covering ``0..n-1``.

    A ragged tail is covered by one extra run aligned to the end, which
    overlaps its predecessor so every run stays time-ordered.
    """
    if n < half:
        raise ContractError(f"domain has {n} windows, fewer than half a batch ({half})")
    starts = list(range(0, n - half + 1, half))
    if starts[-1] + half < n:
        starts.append(n - half)
    return starts


def _order(n: int, rng: Optional[np.random.Generator]) -> np.ndarray:
    return np.arange(n) if rng is None else rng.permutation(n)


def build_equal_batches(source: WindowSet, target: WindowSet, B: int, *,
                        rng: Optional[np.random.Generator] = None,
                        labelled_target: bool = False) -> list[Batch]:
    """Half-source / half-target batches, each half in chronological order.

    The domain with fewer runs cycles from its start until the other is
    exhausted. With ``rng`` both domains are shuffled first (i.i.d. batches).
    With ``labelled_target`` the target half carries its labels and enters
    the regression loss; otherwise target labels are never read.
    """
    if B < 2 or B % 2:
        raise ContractError(f"batch size must be even and >= 2, got {B}")
    if len(source) == 0 or len(target) == 0:
        raise ContractError("both domains need at least one window")
    half = B // 2
    s_order, t_order = _order(len(source), rng), _order(len(target), rng)
    s_runs, t_runs = chunk_starts(len(source), half), chunk_starts(len(target), half)
    s_y = source.targets
    t_y = target.targets if labelled_target else None
    labels = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(half, dtype=np.int64)])
    mask = np.ones(B) if labelled_target else np.concatenate([np.ones(half), np.zeros(half)])
    batches = []
    for k in range(max(len(s_runs), len(t_runs))):
        si = s_order[s_runs[k % len(s_runs)]:][:half]
        ti = t_order[t_runs[k % len(t_runs)]:][:half]
        ty = t_y[ti] if t_y is not None else np.zeros(half)
        batches.append(Batch(
            np.concatenate([source.sequences[si], target.sequences[ti]]),
            np.concatenate([s_y[si], ty]),
            labels.copy(),
            mask.copy(),
            np.concatenate([source.origin_index[si], target.origin_index[ti]]),
        ))
    return batches


def build_source_batches(source: WindowSet, size: int, *,
                         rng: Optional[np.random.Generator] = None) -> list[Batch]:
    """Source-only batches; the same runs as the source halves of equal batches."""
    order = _order(len(source), rng)
    y = source.targets
    out = []
    for start in chunk_starts(len(source), size):
        idx = order[start:start + size]
        out.append(Batch(source.sequences[idx], y[idx], np.zeros(size, dtype=np.int64),
                         np.ones(size), source.origin_index[idx]))
    return out


def build_union(source: WindowSet, target: WindowSet) -> WindowSet:
    """Concatenation relabelled 0 (source) then 1 (target)."""
    parts = [s for s in (source, target) if len(s)]
    if not parts:
        raise ContractError("union of two empty sets")
    seqs = np.concatenate([p.sequences for p in parts])
    labels = np.concatenate([np.zeros(len(source), dtype=np.int64),
                             np.ones(len(target), dtype=np.int64)])
    origin = np.concatenate([p.origin_index for p in parts])
    # union rows carry no regression targets
    return WindowSet(seqs, np.zeros(len(labels)), labels, origin)


def split_blocks(n: int, k: int) -> list[np.ndarray]:
    """``k`` contiguous index blocks covering ``0..n-1``."""
    if k < 2:
        raise ContractError("need at least 2 folds")
    if n < k:
        raise DataError(f"{n} windows cannot form {k} blocks")
    return [np.asarray(b) for b in np.array_split(np.arange(n), k)]
