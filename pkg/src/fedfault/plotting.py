"""Learning-curve SVGs: mean over seeds with a min-max band per scenario."""

from __future__ import annotations

import csv
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

METRIC_COLUMNS = {"accuracy": "test accuracy", "auroc": "test AUROC (macro one-vs-rest)", "train_loss": "training loss"}

# fixed ids and no timestamp keep the SVG bytes reproducible
SVG_RC = {"svg.hashsalt": "fedfault", "svg.fonttype": "none", "path.simplify": False}


@dataclass
class Curve:
    label: str
    rounds: np.ndarray
    values: np.ndarray  # seeds x eval points, NaN where undefined

    def mean(self) -> np.ndarray:
        out = np.full(self.values.shape[1], np.nan)
        defined = ~np.isnan(self.values).all(axis=0)
        out[defined] = np.nanmean(self.values[:, defined], axis=0)
        return out


def curves_from_rows(rows: Iterable[dict], metric: str = "accuracy") -> list[Curve]:
    """Group history.csv rows by cell into one curve each (seeds stacked)."""
    if metric not in METRIC_COLUMNS:
        raise ValueError(f"metric must be one of {sorted(METRIC_COLUMNS)}")
    grouped: OrderedDict[str, dict[str, dict[int, float]]] = OrderedDict()
    for row in rows:
        text = row[metric]
        value = float(text) if text not in ("", None) else np.nan
        grouped.setdefault(row["cell"], {}).setdefault(row["seed"], {})[int(row["round"])] = value
    curves = []
    for cell, by_seed in grouped.items():
        rounds = sorted({r for series in by_seed.values() for r in series})
        values = np.array(
            [[series.get(r, np.nan) for r in rounds] for _, series in sorted(by_seed.items(), key=lambda kv: int(kv[0]))]
        )
        curves.append(Curve(cell, np.array(rounds), values))
    return curves


def read_history(paths: Sequence[str | Path], metric: str = "accuracy") -> list[Curve]:
    rows: list[dict] = []
    for path in paths:
        with open(path, newline="", encoding="utf-8") as fh:
            rows.extend(csv.DictReader(fh))
    return curves_from_rows(rows, metric)


def emit_plot(curves: Sequence[Curve], path: str | Path, metric: str = "accuracy", title: str | None = None) -> Path:
    """Write one line per curve to ``path`` (SVG)."""
    if not curves:
        raise ValueError("nothing to plot: no histories given")
    for curve in curves:
        if curve.values.size == 0:
            raise ValueError(f"curve {curve.label!r} has no evaluation points")
    path = Path(path)
    with matplotlib.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(7, 4.5))
        try:
            for i, curve in enumerate(curves):
                with np.errstate(all="ignore"):
                    lo = np.nanmin(np.where(np.isnan(curve.values), np.inf, curve.values), axis=0)
                    hi = np.nanmax(np.where(np.isnan(curve.values), -np.inf, curve.values), axis=0)
                (line,) = ax.plot(curve.rounds, curve.mean(), label=curve.label, linewidth=1.4)
                line.set_gid(f"curve-{i}")
                if curve.values.shape[0] > 1:
                    band = ax.fill_between(
                        curve.rounds, np.where(np.isfinite(lo), lo, np.nan), np.where(np.isfinite(hi), hi, np.nan),
                        alpha=0.2, color=line.get_color(), linewidth=0,
                    )
                    band.set_gid(f"band-{i}")
            ax.set_xlabel("communication round")
            ax.set_ylabel(METRIC_COLUMNS.get(metric, metric))
            if title:
                ax.set_title(title)
            ax.grid(alpha=0.3)
            ax.legend(fontsize=7, loc="best")
            fig.tight_layout()
            fig.savefig(path, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return path
