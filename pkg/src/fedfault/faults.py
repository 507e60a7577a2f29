"""Seeded fault plans: participation masks, link failures, hyperparameter overrides."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .rng import substream

PARTICIPATION_MODES = ("bernoulli", "exact")


@dataclass(frozen=True)
class LabelNoise:
    fraction: float = 1.0
    mode: str = "cyclic"


@dataclass
class ScenarioSpec:
    """Per-client fault parameters. Clients not mentioned are reliable."""

    participation: dict[int, float] = field(default_factory=dict)
    upload: dict[int, float] = field(default_factory=dict)
    download: dict[int, float] = field(default_factory=dict)
    # client -> {"eta": ..., "local_epochs": ..., "batch_size": ...}
    overrides: dict[int, dict[str, float]] = field(default_factory=dict)
    label_noise: dict[int, LabelNoise] = field(default_factory=dict)
    excluded: tuple[int, ...] = ()
    participation_mode: str = "bernoulli"

    def validate(self, num_clients: int) -> None:
        for name in ("participation", "upload", "download"):
            for client, rate in getattr(self, name).items():
                if not 0.0 <= rate <= 1.0:
                    raise ValueError(f"{name} rate for client {client} must be in [0, 1], got {rate}")
        if self.participation_mode not in PARTICIPATION_MODES:
            raise ValueError(f"participation_mode must be one of {PARTICIPATION_MODES}")
        for name in ("participation", "upload", "download", "overrides", "label_noise"):
            for client in getattr(self, name):
                if not 0 <= client < num_clients:
                    raise ValueError(f"{name} names unknown client {client} (have {num_clients})")
        for client in self.excluded:
            if not 0 <= client < num_clients:
                raise ValueError(f"excluded names unknown client {client} (have {num_clients})")
        for client, values in self.overrides.items():
            unknown = set(values) - {"eta", "local_epochs", "batch_size"}
            if unknown:
                raise ValueError(f"client {client}: cannot override {sorted(unknown)}")


@dataclass(frozen=True)
class RoundPlan:
    participates: np.ndarray
    download_ok: np.ndarray
    upload_ok: np.ndarray
    overrides: Mapping[int, Mapping[str, float]]

    @property
    def num_clients(self) -> int:
        return int(self.participates.size)

    def downloads(self) -> np.ndarray:
        return self.participates & self.download_ok

    def uploads(self) -> np.ndarray:
        return self.participates & self.upload_ok

    @staticmethod
    def fault_free(num_clients: int) -> RoundPlan:
        ones = np.ones(num_clients, dtype=bool)
        return RoundPlan(ones, ones, ones, {})


@dataclass(frozen=True)
class FaultPlan:
    """``T x K`` boolean masks; ``plan[t]`` is the plan for round ``t + 1``."""

    participates: np.ndarray
    download_ok: np.ndarray
    upload_ok: np.ndarray
    overrides: Mapping[int, Mapping[str, float]] = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.participates.shape[0])

    @property
    def num_clients(self) -> int:
        return int(self.participates.shape[1])

    def __getitem__(self, t: int) -> RoundPlan:
        return RoundPlan(self.participates[t], self.download_ok[t], self.upload_ok[t], self.overrides)

    @staticmethod
    def fault_free(num_clients: int, rounds: int) -> FaultPlan:
        ones = np.ones((rounds, num_clients), dtype=bool)
        return FaultPlan(ones, ones.copy(), ones.copy(), {})


def _bernoulli_column(rate: float, rounds: int, rng: np.random.Generator) -> np.ndarray:
    return rng.random(rounds) < rate


def _exact_column(rate: float, rounds: int, rng: np.random.Generator) -> np.ndarray:
    column = np.zeros(rounds, dtype=bool)
    column[rng.choice(rounds, size=int(np.floor(rate * rounds + 0.5)), replace=False)] = True
    return column


def sample_participation(
    rates: Mapping[int, float],
    num_clients: int,
    rounds: int,
    seed: int,
    mode: str = "bernoulli",
) -> np.ndarray:
    """``T x K`` mask; only clients listed in ``rates`` can drop out.

    Each client draws from its own substream, so one client's rate never changes
    another client's flags.
    """
    draw = {"bernoulli": _bernoulli_column, "exact": _exact_column}[mode]
    mask = np.ones((rounds, num_clients), dtype=bool)
    for client, rate in rates.items():
        mask[:, client] = draw(rate, rounds, substream(seed, "participation", client))
    return mask


def sample_link_faults(
    upload_rates: Mapping[int, float],
    download_rates: Mapping[int, float],
    num_clients: int,
    rounds: int,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Independent upload and download success masks, each ``T x K``."""
    upload = np.ones((rounds, num_clients), dtype=bool)
    download = np.ones((rounds, num_clients), dtype=bool)
    for client, rate in upload_rates.items():
        upload[:, client] = _bernoulli_column(rate, rounds, substream(seed, "upload", client))
    for client, rate in download_rates.items():
        download[:, client] = _bernoulli_column(rate, rounds, substream(seed, "download", client))
    return upload, download


def select_clients(fraction: float, num_clients: int, rounds: int, seed: int) -> np.ndarray:
    """Server-side sampling of ``max(C*K, 1)`` clients per round."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"client fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return np.ones((rounds, num_clients), dtype=bool)
    m = max(int(fraction * num_clients), 1)
    rng = substream(seed, "selection")
    mask = np.zeros((rounds, num_clients), dtype=bool)
    for t in range(rounds):
        mask[t, rng.choice(num_clients, size=m, replace=False)] = True
    return mask


def build_fault_plan(
    spec: ScenarioSpec,
    num_clients: int,
    rounds: int,
    seed: int,
    client_fraction: float = 1.0,
) -> FaultPlan:
    """Resolve a scenario into per-round flags.

    Hyperparameter overrides persist over every round. Excluded clients never
    participate. Label corruption is applied to shards beforehand, not here.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    spec.validate(num_clients)
    participates = sample_participation(
        spec.participation, num_clients, rounds, seed, spec.participation_mode
    )
    participates &= select_clients(client_fraction, num_clients, rounds, seed)
    for client in spec.excluded:
        participates[:, client] = False
    upload_ok, download_ok = sample_link_faults(spec.upload, spec.download, num_clients, rounds, seed)
    overrides = {k: dict(v) for k, v in sorted(spec.overrides.items())}
    return FaultPlan(participates, download_ok, upload_ok, overrides)
