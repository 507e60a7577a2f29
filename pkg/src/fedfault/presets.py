"""Built-in experiment grids at desk scale.

Weeds-style presets use the three-site imbalanced profile (4 classes, about
12,000 samples, the smallest site holding only classes 0 and 3). Camera-style
presets use 10 balanced classes spread uniformly over 15 or 6 clients and
report macro AUROC.
"""

from __future__ import annotations

from .config import ConfigError, GridSpec, parse_text

WEEDS_BASE = """\
data.source = synthetic
data.num_classes = 4
data.input_dim = 16
data.samples = 12000
data.class_separation = 5.0
data.noise_sigma = 1.0
data.sites = table1
data.site_shift = 1.0
model.hidden_dim = 0
fed.eta = 0.01
fed.local_epochs = 1
fed.batch_size = 50
fed.rounds = {rounds}
fed.eval_every = {eval_every}
run.replicates = {seeds}
run.metric = accuracy
"""

CAMERA_BASE = """\
data.source = synthetic
data.num_classes = 10
data.input_dim = 20
data.samples = 3000
data.class_separation = 3.0
data.noise_sigma = 1.0
data.sites = uniform
fed.clients = {clients}
model.hidden_dim = 16
model.activation = relu
fed.eta = 0.15
fed.local_epochs = 1
fed.batch_size = 64
fed.class_weighting = true
fed.rounds = {rounds}
fed.eval_every = {eval_every}
run.replicates = {seeds}
run.metric = auroc
"""

# (E, B, T) columns of the hyperparameter table; T is divided by TABLE3_ROUND_SCALE
TABLE3_COLUMNS = ((1, 10, 200), (5, 10, 200), (20, 10, 200), (1, 50, 200),
                  (5, 50, 200), (20, 50, 200), (1, 50, 2000), (1, 50, 10000))
TABLE3_ROUND_SCALE = 10

RATES = (1.0, 0.75, 0.5, 0.25)
ETA_SCALES = (1, 2, 5, 10, 20, 50, 100)
MISLABELLED = tuple(range(7))


def _rate_tag(rate: float) -> str:
    return f"p{round(rate * 100):03d}"


def _rounds(rounds: int, quick: bool) -> int:
    return max(rounds // 5, 5) if quick else rounds


def table3(seeds: int, quick: bool) -> str:
    lines = [WEEDS_BASE.format(rounds=_rounds(20, quick), eval_every=5, seeds=seeds), "run.baselines = true\n"]
    for e, b, t in TABLE3_COLUMNS:
        name = f"E{e}_B{b}_T{t // TABLE3_ROUND_SCALE}"
        lines.append(f"variant.{name}.fed.local_epochs = {e}\n")
        lines.append(f"variant.{name}.fed.batch_size = {b}\n")
        lines.append(f"variant.{name}.fed.rounds = {_rounds(t // TABLE3_ROUND_SCALE, quick)}\n")
    return "".join(lines)


def fig4(seeds: int, quick: bool) -> str:
    lines = [WEEDS_BASE.format(rounds=_rounds(500, quick), eval_every=10, seeds=seeds)]
    for k in range(3):
        for rate in RATES:
            lines.append(f"variant.client{k}_{_rate_tag(rate)}.scenario.client.{k}.participation = {rate}\n")
    return "".join(lines)


def fig5_6(seeds: int, quick: bool) -> str:
    lines = [WEEDS_BASE.format(rounds=_rounds(500, quick), eval_every=10, seeds=seeds)]
    for direction in ("upload", "download"):
        for k in range(3):
            for rate in RATES:
                name = f"{direction}{k}_{_rate_tag(rate)}"
                lines.append(f"variant.{name}.scenario.client.{k}.{direction} = {rate}\n")
    return "".join(lines)


def fig7(seeds: int, quick: bool) -> str:
    lines = [CAMERA_BASE.format(clients=15, rounds=_rounds(100, quick), eval_every=5, seeds=seeds)]
    lines.append("variant.caseA_clean.scenario.exclude =\n")
    for k in MISLABELLED:
        lines.append(f"variant.caseB_mislabelled.scenario.client.{k}.label_flip = 1.0\n")
    lines.append(f"variant.caseC_clean_only.scenario.exclude = {', '.join(map(str, MISLABELLED))}\n")
    return "".join(lines)


def fig8(seeds: int, quick: bool) -> str:
    return CAMERA_BASE.format(clients=6, rounds=_rounds(100, quick), eval_every=5, seeds=seeds) + (
        f"grid.scenario.client.0.eta_scale = {', '.join(map(str, ETA_SCALES))}\n"
    )


def fig9(seeds: int, quick: bool) -> str:
    return CAMERA_BASE.format(clients=6, rounds=_rounds(100, quick), eval_every=1, seeds=seeds) + (
        "scenario.client.0.label_flip = 1.0\n"
        "grid.scenario.client.0.eta_scale = 1, 10\n"
    )


PRESETS = {
    "table3": table3,
    "fig4": fig4,
    "fig5-6": fig5_6,
    "fig7": fig7,
    "fig8": fig8,
    "fig9": fig9,
}


def preset_text(name: str, seeds: int = 5, quick: bool = False) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    if seeds < 1:
        raise ConfigError("seeds must be >= 1")
    return PRESETS[name](seeds, quick)


def preset(name: str, seeds: int = 5, quick: bool = False) -> GridSpec:
    return parse_text(preset_text(name, seeds, quick), f"<preset {name}>")
