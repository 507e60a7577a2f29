"""Turn configs into runs and runs into files.

Output of a single run (``run``)::

    history.csv   one row per (cell, seed, evaluated round)
    summary.csv   one row per (cell, seed): the final evaluated round plus best values
    meta          resolved config, version, substream fingerprints (parses back as a config)
    events.log    non-finite and zero-upload events, one per line
    curves.svg    learning curves (when run.plot is true)

A grid (``run_grid``) writes one such directory per cell plus ``grid_summary.csv``,
``grid_pivot.csv`` and ``grid_meta`` at the top level.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, GridSpec
from .datagen import FederatedData, build_sites, flip_labels, generate_synthetic, load_csv
from .faults import build_fault_plan
from .federation import SessionConfig, centralized_train, local_train, run_session
from .metrics import AUROC_REDUCTION, RunHistory
from .model import Hyperparams, ModelArch
from .plotting import curves_from_rows, emit_plot
from .rng import STREAM_NAMES, substream, substream_fingerprint

log = logging.getLogger(__name__)

HISTORY_COLUMNS = (
    "cell", "seed", "round", "accuracy", "auroc", "train_loss",
    "participated", "uploaded", "downloaded", "nonfinite",
)
SUMMARY_COLUMNS = (
    "cell", "seed", "round", "accuracy", "auroc", "train_loss",
    "best_accuracy", "best_auroc", "nonfinite_events",
)


class RunError(RuntimeError):
    """A run failed after its configuration was accepted."""


class OutputExists(RunError):
    pass


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else str(value)
    return str(value)


def build_data(config: ExperimentConfig, seed: int) -> FederatedData:
    """Sites for one replicate, with any configured label corruption applied."""
    if config["data.source"] == "csv":
        dataset = load_csv(config["data.csv_path"], config["data.num_classes"])
    else:
        dataset = generate_synthetic(
            config["data.num_classes"],
            config["data.input_dim"],
            config["data.samples"],
            config["data.class_separation"],
            config["data.noise_sigma"],
            substream(seed, "data"),
        )
    fed = build_sites(
        dataset,
        config.site_specs(),
        config["data.test_fraction"],
        config["data.site_shift"],
        substream(seed, "data", 1),
    )
    for k, noise in sorted(config.scenario().label_noise.items()):
        fed.shards[k] = flip_labels(fed.shards[k], noise.fraction, noise.mode, substream(seed, "labels", k))
    return fed


def session_config(config: ExperimentConfig, fed: FederatedData, seed: int) -> SessionConfig:
    arch = ModelArch(fed.input_dim, fed.num_classes, config["model.hidden_dim"], config["model.activation"])
    hp = Hyperparams(config["fed.eta"], config["fed.local_epochs"], config["fed.batch_size"])
    return SessionConfig(
        arch,
        hp,
        config["fed.rounds"],
        fed.shards,
        fed.test,
        seed=seed,
        eval_every=config["fed.eval_every"],
        class_weighting=config["fed.class_weighting"],
        strict_weights=config["fed.strict_weights"],
    )


def run_replicate(config: ExperimentConfig, seed: int) -> list[RunHistory]:
    """Federated run (and baselines when requested) for one seed."""
    fed = build_data(config, seed)
    session = session_config(config, fed, seed)
    k = len(fed.shards)
    plan = build_fault_plan(config.scenario(), k, session.rounds, seed, config["fed.client_fraction"])
    histories = [run_session(session, plan)]
    if config["run.baselines"]:
        histories.append(centralized_train(session))
        histories.extend(local_train(session, i) for i in range(k))
    return histories


@dataclass
class RunResult:
    label: str
    seeds: list[int]
    histories: dict[int, list[RunHistory]] = field(default_factory=dict)

    def history_rows(self) -> list[dict[str, str]]:
        rows = []
        for seed in self.seeds:
            for history in self.histories[seed]:
                cell = f"{self.label}/{history.label}"
                for r in history.records:
                    rows.append({
                        "cell": cell, "seed": str(seed), "round": str(r.round),
                        "accuracy": fmt(r.test_accuracy), "auroc": fmt(r.test_auroc),
                        "train_loss": fmt(r.train_loss), "participated": r.participated,
                        "uploaded": r.uploaded, "downloaded": r.downloaded,
                        "nonfinite": fmt(r.nonfinite),
                    })
        return rows

    def summary_rows(self) -> list[dict[str, str]]:
        rows = []
        for seed in self.seeds:
            for history in self.histories[seed]:
                final = history.final
                aurocs = [r.test_auroc for r in history.records if r.test_auroc is not None]
                rows.append({
                    "cell": f"{self.label}/{history.label}", "seed": str(seed),
                    "round": str(final.round), "accuracy": fmt(final.test_accuracy),
                    "auroc": fmt(final.test_auroc), "train_loss": fmt(final.train_loss),
                    "best_accuracy": fmt(max(r.test_accuracy for r in history.records)),
                    "best_auroc": fmt(max(aurocs) if aurocs else None),
                    "nonfinite_events": str(len(history.events)),
                })
        return rows

    def events(self) -> list[str]:
        return [
            f"seed {seed} {history.label}: {event}"
            for seed in self.seeds
            for history in self.histories[seed]
            for event in history.events
        ]


def _replicate_task(args: tuple[ExperimentConfig, int]) -> tuple[int, list[RunHistory]]:
    config, seed = args
    return seed, run_replicate(config, seed)


def execute(config: ExperimentConfig, jobs: int = 1) -> RunResult:
    """Run every replicate seed in memory; parallel over seeds when ``jobs > 1``."""
    result = RunResult(config["run.label"], config.seeds())
    tasks = [(config, seed) for seed in result.seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            done = list(pool.map(_replicate_task, tasks))
    else:
        done = [_replicate_task(t) for t in tasks]
    result.histories = dict(done)
    return result


def csv_text(rows: list[dict[str, str]], columns: tuple[str, ...]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def meta_text(config: ExperimentConfig, error: str | None = None) -> str:
    lines = [config.to_text()]
    lines.append(f"meta.version = {__version__}\n")
    lines.append(f"meta.auroc_reduction = {AUROC_REDUCTION}\n")
    k = config.num_clients
    for seed in config.seeds():
        for name in STREAM_NAMES:
            indices = range(k) if name in ("shuffle", "participation", "upload", "download", "labels") else (0,)
            for i in indices:
                lines.append(f"meta.stream.{seed}.{name}.{i} = {substream_fingerprint(seed, name, i):016x}\n")
    if error is not None:
        lines.append(f"meta.error = {' '.join(error.split())}\n")
    return "".join(lines)


def prepare_output(out: str | Path, force: bool) -> Path:
    out = Path(out)
    if out.exists() and not out.is_dir():
        raise OutputExists(f"{out} exists and is not a directory")
    if out.is_dir() and any(out.iterdir()) and not force:
        raise OutputExists(f"{out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_result(result: RunResult, config: ExperimentConfig, out: Path) -> None:
    history = result.history_rows()
    (out / "history.csv").write_text(csv_text(history, HISTORY_COLUMNS), encoding="utf-8")
    (out / "summary.csv").write_text(csv_text(result.summary_rows(), SUMMARY_COLUMNS), encoding="utf-8")
    (out / "events.log").write_text("".join(e + "\n" for e in result.events()), encoding="utf-8")
    (out / "meta").write_text(meta_text(config), encoding="utf-8")
    if config["run.plot"]:
        emit_plot(curves_from_rows(history, config["run.metric"]), out / "curves.svg",
                  config["run.metric"], config["run.label"])


def run(config: ExperimentConfig, out: str | Path, force: bool = False, jobs: int = 1) -> RunResult:
    """Execute a config and write its artifacts to ``out``."""
    out = prepare_output(out, force)
    try:
        result = execute(config, jobs)
        write_result(result, config, out)
    except Exception as exc:
        (out / "meta").write_text(meta_text(config, f"{type(exc).__name__}: {exc}"), encoding="utf-8")
        raise RunError(f"run failed: {exc}") from exc
    return result


def cell_dir(key: str) -> str:
    return key.split(":", 1)[0]


def _cell_task(args: tuple[str, ExperimentConfig, str]) -> tuple[str, list[dict[str, str]], list[dict[str, str]]]:
    key, config, out = args
    directory = Path(out) / cell_dir(key)
    directory.mkdir(parents=True, exist_ok=True)
    try:
        result = execute(config)
        write_result(result, config, directory)
    except Exception as exc:
        (directory / "meta").write_text(meta_text(config, f"{type(exc).__name__}: {exc}"), encoding="utf-8")
        raise RunError(f"grid cell {key} failed: {exc}") from exc
    return key, result.summary_rows(), result.history_rows()


def pivot_rows(summary: list[dict[str, str]], cells: list[str]) -> tuple[list[dict[str, str]], tuple[str, ...]]:
    """Approach x cell table of mean best accuracy over seeds."""
    values: dict[str, dict[str, list[float]]] = {}
    for row in summary:
        key, approach = row["cell"].rsplit("/", 1)
        values.setdefault(approach, {}).setdefault(key, []).append(float(row["best_accuracy"]))

    def order(name: str) -> tuple[int, int]:
        if name == "centralized":
            return (0, 0)
        if name == "federated":
            return (1, 0)
        return (2, int(name.split("-")[1]))

    rows = []
    for approach in sorted(values, key=order):
        row = {"approach": approach}
        for key in cells:
            seeds = values[approach].get(key)
            row[key] = fmt(float(np.mean(seeds))) if seeds else ""
        rows.append(row)
    return rows, ("approach", *cells)


def run_grid(grid: GridSpec, out: str | Path, force: bool = False, jobs: int = 1) -> list[dict[str, str]]:
    """Run every cell; summary rows come out sorted by cell key whatever the completion order."""
    cells = grid.cells()
    out = prepare_output(out, force)
    (out / "grid_meta").write_text(grid.to_text(), encoding="utf-8")
    tasks = [(key, config, str(out)) for key, config in cells]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            done = list(pool.map(_cell_task, tasks))
    else:
        done = [_cell_task(t) for t in tasks]
    done.sort(key=lambda item: item[0])
    summary = [row for _, rows, _ in done for row in rows]
    history = [row for _, _, rows in done for row in rows]
    (out / "grid_summary.csv").write_text(csv_text(summary, SUMMARY_COLUMNS), encoding="utf-8")
    pivot, columns = pivot_rows(summary, [key for key, _ in cells])
    (out / "grid_pivot.csv").write_text(csv_text(pivot, columns), encoding="utf-8")
    if grid.base["run.plot"]:
        federated = [row for row in history if row["cell"].endswith("/federated")]
        metric = grid.base["run.metric"]
        emit_plot(curves_from_rows(federated, metric), out / "curves.svg", metric)
    return summary
