"""Five-way model comparison on shared folds.

Rows: constant mean, source-only baseline, fully supervised, shuffled DANN
and chronological DANNTe. Every row is evaluated on the same held-out
blocks with the same seed; the harness checks this before reporting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import WindowSet
from .errors import ContractError
from .metrics import KL_DIRECTION, METRIC_NAMES, MetricsReport
from .training import FoldResult, TrainConfig, kfold, report, with_mode

ROWS = ("constant_mean", "baseline", "fully_supervised", "dann", "dannte")
COLUMN_TITLES = {
    "mse_source": "MSE (source)",
    "mse_target": "MSE (target)",
    "mape_target": "MAPE (target)",
    "kl_divergence": "KL",
}


@dataclass
class ComparisonTable:
    reports: dict[str, MetricsReport]
    heldout: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    kl_direction: str = KL_DIRECTION

    def __post_init__(self):
        missing = [r for r in ROWS if r not in self.reports]
        if missing:
            raise ContractError(f"comparison is missing rows {missing}")

    def __getitem__(self, row: str) -> MetricsReport:
        return self.reports[row]

    def to_csv(self) -> str:
        cols = []
        for name in METRIC_NAMES:
            cols += [name, f"{name}_std"]
        lines = ["model," + ",".join(cols)]
        for row, rep in self.reports.items():
            d = rep.as_dict()
            lines.append(row + "," + ",".join(repr(float(d[c])) for c in cols))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        """Aligned table of ``mean ± std`` cells."""
        header = ["model"] + [COLUMN_TITLES[n] for n in METRIC_NAMES]
        rows = [header]
        for row, rep in self.reports.items():
            cells = [row]
            for name in METRIC_NAMES:
                m, s = rep.mean(name), rep.std(name)
                cells.append("n/a" if math.isnan(m) else f"{m:.4g} ± {s:.2g}")
            rows.append(cells)
        widths = [max(len(r[k]) for r in rows) for k in range(len(header))]
        out = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        out.insert(1, "  ".join("-" * w for w in widths))
        out.append(f"KL direction: {self.kl_direction}; ± is the sample std over folds")
        return "\n".join(out) + "\n"


def _heldout(results: list[FoldResult]) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(r.heldout_source, r.heldout_target) for r in results]


def run_comparison(cfg: TrainConfig, source: WindowSet, target: WindowSet,
                   workers=None, log=None) -> ComparisonTable:
    """k-fold every comparison row with ``cfg`` (mode overridden per row).

    ``log`` receives one progress line per finished row.
    """
    reports, reference = {}, None
    for row in ROWS:
        results = kfold(with_mode(cfg, row), source, target, workers=workers)
        held = _heldout(results)
        if reference is None:
            reference = held
        elif not all(np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
                     for a, b in zip(reference, held)):
            raise ContractError(f"row {row} was evaluated on different held-out windows")
        reports[row] = report(results)
        if log is not None:
            log(f"{row}: mse_target={reports[row].mse_target:.4g} "
                f"kl={reports[row].kl_divergence:.4g} ({KL_DIRECTION})")
    return ComparisonTable(reports, reference or [])
