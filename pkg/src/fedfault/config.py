"""Flat ``key = value`` experiment configuration.

One setting per line, ``#`` starts a comment. Keys are dotted paths; per-client
and per-site keys carry an integer index (``scenario.client.0.participation``,
``site.2.classes``). Grid axes are written ``grid.<key> = v1, v2, ...`` and
named variants ``variant.<name>.<key> = value``. Keys under ``meta.`` are
accepted and ignored, so a run's ``meta`` file parses back into its config.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .datagen import FLIP_MODES, SiteSpec, table1_sites, uniform_sites
from .faults import PARTICIPATION_MODES, LabelNoise, ScenarioSpec
from .model import ACTIVATIONS


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.key = key
        self.line = line


REQUIRED = object()


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected true/false, got {text!r}")


def _int_list(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(part) for part in text.split(","))


def _float_list(text: str) -> tuple[float, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(float(part) for part in text.split(","))


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        value = text.strip()
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {value!r}")
        return value

    return parse


def _unit(lo_open: bool = False, hi_open: bool = False) -> Callable[[float], str | None]:
    def check(v: float) -> str | None:
        if (v <= 0 if lo_open else v < 0) or (v >= 1 if hi_open else v > 1):
            lo = "(0" if lo_open else "[0"
            hi = "1)" if hi_open else "1]"
            return f"must be in {lo}, {hi}"
        return None

    return check


def _positive(v) -> str | None:
    return None if v > 0 else "must be positive"


def _non_negative(v) -> str | None:
    return None if v >= 0 else "must be non-negative"


def _label(text: str) -> str:
    value = text.strip()
    if not re.fullmatch(r"[A-Za-z0-9_.:;=+\-/]+", value):
        raise ValueError("labels may not contain spaces or commas")
    return value


@dataclass(frozen=True)
class Field:
    parse: Callable[[str], Any]
    default: Any
    check: Callable[[Any], str | None] | None = None
    doc: str = ""


SCHEMA: dict[str, Field] = {
    "data.source": Field(_choice("synthetic", "csv"), REQUIRED, doc="synthetic | csv"),
    "data.csv_path": Field(str.strip, "", doc="CSV file (f0..f{d-1},label)"),
    "data.num_classes": Field(int, 4, lambda v: None if v >= 2 else "must be >= 2"),
    "data.input_dim": Field(int, 16, _positive),
    "data.samples": Field(int, 12000, _positive),
    "data.class_separation": Field(float, 5.0, _positive),
    "data.noise_sigma": Field(float, 1.0, _positive),
    "data.sites": Field(_choice("table1", "uniform", "explicit"), "uniform", doc="table1 | uniform | explicit (site.<k>.*)"),
    "data.site_shift": Field(float, 0.0, _unit(), "per-site feature rotation mix, 0..1"),
    "data.test_fraction": Field(float, 0.2, _unit(True, True)),
    "model.hidden_dim": Field(int, 0, _non_negative),
    "model.activation": Field(_choice(*ACTIVATIONS), "tanh"),
    "fed.clients": Field(int, 3, _positive, "client count for uniform sites"),
    "fed.rounds": Field(int, REQUIRED, _positive),
    "fed.eta": Field(float, 0.05, _positive),
    "fed.local_epochs": Field(int, 1, _positive),
    "fed.batch_size": Field(int, 50, _positive),
    "fed.client_fraction": Field(float, 1.0, _unit(lo_open=True)),
    "fed.class_weighting": Field(_bool, False, doc="balanced class weights per client"),
    "fed.strict_weights": Field(_bool, False, doc="weights n_k / n over all clients"),
    "fed.eval_every": Field(int, 10, _positive),
    "scenario.participation_mode": Field(_choice(*PARTICIPATION_MODES), "bernoulli"),
    "scenario.exclude": Field(_int_list, (), doc="clients that never participate"),
    "run.seed": Field(int, 0, _non_negative),
    "run.replicates": Field(int, 1, _positive, "seeds run.seed .. run.seed + n - 1"),
    "run.baselines": Field(_bool, False, doc="also run centralized and per-client local"),
    "run.plot": Field(_bool, True),
    "run.metric": Field(_choice("accuracy", "auroc"), "accuracy"),
    "run.label": Field(_label, "base"),
    "grid.max_cells": Field(int, 1000, _positive),
}

CLIENT_FIELDS: dict[str, Field] = {
    "participation": Field(float, 1.0, _unit()),
    "upload": Field(float, 1.0, _unit()),
    "download": Field(float, 1.0, _unit()),
    "eta": Field(float, None, _positive),
    "eta_scale": Field(float, None, _positive),
    "local_epochs": Field(int, None, _positive),
    "batch_size": Field(int, None, _positive),
    "label_flip": Field(float, 0.0, _unit()),
    "label_flip_mode": Field(_choice(*FLIP_MODES), "cyclic"),
}

SITE_FIELDS: dict[str, Field] = {
    "fraction": Field(float, REQUIRED, _unit(lo_open=True)),
    "classes": Field(_int_list, REQUIRED),
    "proportions": Field(_float_list, ()),
}

CLIENT_KEY = re.compile(r"scenario\.client\.(\d+)\.([a-z_]+)")
SITE_KEY = re.compile(r"site\.(\d+)\.([a-z_]+)")


def field_for(key: str) -> Field:
    if key in SCHEMA:
        return SCHEMA[key]
    m = CLIENT_KEY.fullmatch(key)
    if m and m.group(2) in CLIENT_FIELDS:
        return CLIENT_FIELDS[m.group(2)]
    m = SITE_KEY.fullmatch(key)
    if m and m.group(2) in SITE_FIELDS:
        return SITE_FIELDS[m.group(2)]
    raise KeyError(key)


def parse_value(key: str, text: str, line: int | None = None) -> Any:
    try:
        spec = field_for(key)
    except KeyError:
        raise ConfigError("unknown key", key, line) from None
    try:
        value = spec.parse(text)
    except ValueError as exc:
        raise ConfigError(f"bad value {text.strip()!r}: {exc}", key, line) from None
    if spec.check is not None:
        items = value if isinstance(value, tuple) else (value,)
        for item in items:
            problem = spec.check(item)
            if problem:
                raise ConfigError(f"{value!r} {problem}", key, line)
    return value


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(format_value(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved configuration: every schema key present, defaults applied."""

    values: dict[str, Any]

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def get(self, key: str, default: Any = None) -> Any:
        return self.values.get(key, default)

    @property
    def num_clients(self) -> int:
        sites = self.values["data.sites"]
        if sites == "table1":
            return 3
        if sites == "explicit":
            return len(site_indices(self.values))
        return self.values["fed.clients"]

    def seeds(self) -> list[int]:
        return [self.values["run.seed"] + r for r in range(self.values["run.replicates"])]

    def site_specs(self) -> list[SiteSpec]:
        sites = self.values["data.sites"]
        if sites == "table1":
            return table1_sites()
        if sites == "uniform":
            return uniform_sites(self.values["fed.clients"], self.values["data.num_classes"])
        specs = []
        for k in site_indices(self.values):
            props = self.values.get(f"site.{k}.proportions") or None
            specs.append(
                SiteSpec(self.values[f"site.{k}.fraction"], self.values[f"site.{k}.classes"], props)
            )
        return specs

    def client_value(self, k: int, name: str) -> Any:
        return self.values.get(f"scenario.client.{k}.{name}", CLIENT_FIELDS[name].default)

    def scenario(self) -> ScenarioSpec:
        spec = ScenarioSpec(
            excluded=tuple(self.values["scenario.exclude"]),
            participation_mode=self.values["scenario.participation_mode"],
        )
        base_eta = self.values["fed.eta"]
        for k in client_indices(self.values):
            for name, target in (
                ("participation", spec.participation),
                ("upload", spec.upload),
                ("download", spec.download),
            ):
                rate = self.client_value(k, name)
                if rate < 1.0:
                    target[k] = rate
            override: dict[str, float] = {}
            if self.client_value(k, "eta_scale") is not None:
                override["eta"] = base_eta * self.client_value(k, "eta_scale")
            if self.client_value(k, "eta") is not None:
                override["eta"] = self.client_value(k, "eta")
            for name in ("local_epochs", "batch_size"):
                if self.client_value(k, name) is not None:
                    override[name] = self.client_value(k, name)
            if override:
                spec.overrides[k] = override
            flip = self.client_value(k, "label_flip")
            if flip > 0:
                spec.label_noise[k] = LabelNoise(flip, self.client_value(k, "label_flip_mode"))
        return spec

    def with_values(self, overrides: dict[str, Any]) -> ExperimentConfig:
        merged = dict(self.values)
        merged.update(overrides)
        return resolve(merged, {})

    def to_text(self) -> str:
        return "".join(f"{key} = {format_value(self.values[key])}\n" for key in sorted(self.values))


def client_indices(values: dict[str, Any]) -> list[int]:
    return sorted({int(m.group(1)) for key in values if (m := CLIENT_KEY.fullmatch(key))})


def site_indices(values: dict[str, Any]) -> list[int]:
    return sorted({int(m.group(1)) for key in values if (m := SITE_KEY.fullmatch(key))})


def resolve(values: dict[str, Any], lines: dict[str, int]) -> ExperimentConfig:
    """Apply defaults and cross-field checks."""
    out = dict(values)
    for key, spec in SCHEMA.items():
        if key not in out:
            if spec.default is REQUIRED:
                raise ConfigError("required setting is missing", key)
            out[key] = spec.default
    if out["data.source"] == "csv" and not out["data.csv_path"]:
        raise ConfigError("data.source = csv needs data.csv_path", "data.csv_path")

    sites = site_indices(out)
    if out["data.sites"] == "explicit":
        if not sites or sites != list(range(len(sites))):
            raise ConfigError("explicit sites must be numbered 0..K-1", "data.sites", lines.get("data.sites"))
        for k in sites:
            for name, spec in SITE_FIELDS.items():
                key = f"site.{k}.{name}"
                if key not in out:
                    if spec.default is REQUIRED:
                        raise ConfigError("required site setting is missing", key)
                    out[key] = spec.default
        try:
            specs = ExperimentConfig(out).site_specs()
        except ValueError as exc:
            raise ConfigError(str(exc), "site") from None
        if sum(s.volume_fraction for s in specs) > 1.0 + 1e-9:
            raise ConfigError("site fractions sum to more than 1", "site")
    elif sites:
        key = f"site.{sites[0]}.fraction"
        raise ConfigError("site.* keys need data.sites = explicit", key, lines.get(key))
    if out["data.sites"] == "table1" and out["data.num_classes"] < 4:
        raise ConfigError("table1 sites need data.num_classes >= 4", "data.num_classes")

    config = ExperimentConfig(out)
    k_total = config.num_clients
    for k in client_indices(out) + list(out["scenario.exclude"]):
        if k >= k_total:
            key = next((key for key in out if key.startswith(f"scenario.client.{k}.")), "scenario.exclude")
            raise ConfigError(f"client {k} does not exist (K = {k_total})", key, lines.get(key))
    return config


@dataclass(frozen=True)
class GridSpec:
    base: ExperimentConfig
    axes: dict[str, tuple[Any, ...]] = field(default_factory=dict)
    variants: dict[str, dict[str, Any]] = field(default_factory=dict)

    @property
    def max_cells(self) -> int:
        return self.base["grid.max_cells"]

    def num_cells(self) -> int:
        n = max(len(self.variants), 1)
        for values in self.axes.values():
            n *= len(values)
        return n

    def cells(self) -> list[tuple[str, ExperimentConfig]]:
        """``(cell_key, config)`` pairs in canonical (key-sorted) order."""
        if self.num_cells() > self.max_cells:
            raise ConfigError(
                f"grid has {self.num_cells()} cells, more than grid.max_cells = {self.max_cells}",
                "grid.max_cells",
            )
        variants = list(self.variants.items()) or [("", {})]
        keys = list(self.axes)
        out = []
        index = 0
        for name, overrides in variants:
            for combo in itertools.product(*(self.axes[k] for k in keys)):
                parts = [f"{k}={format_value(v)}" for k, v in zip(keys, combo)]
                label = f"c{index:03d}" + (f":{name}" if name else "") + (":" + ";".join(parts) if parts else "")
                values = dict(overrides)
                values.update(zip(keys, combo))
                values["run.label"] = label
                try:
                    out.append((label, self.base.with_values(values)))
                except ConfigError as exc:
                    raise ConfigError(f"grid cell {label}: {exc}") from None
                index += 1
        return sorted(out, key=lambda item: item[0])

    def to_text(self) -> str:
        lines = [self.base.to_text()]
        for key, values in self.axes.items():
            lines.append(f"grid.{key} = {', '.join(format_value(v) for v in values)}\n")
        for name, overrides in self.variants.items():
            for key, value in overrides.items():
                lines.append(f"variant.{name}.{key} = {format_value(value)}\n")
        return "".join(lines)


LINE = re.compile(r"^\s*([A-Za-z0-9_.\-]+)\s*=\s*(.*?)\s*$")
VARIANT_KEY = re.compile(r"variant\.([A-Za-z0-9_\-]+)\.(.+)")


def _strip_comment(text: str) -> str:
    if text.lstrip().startswith("#"):
        return ""
    return re.split(r"\s#", text, maxsplit=1)[0]


def parse_text(text: str, source: str = "<config>") -> GridSpec:
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}
    axes: dict[str, tuple[Any, ...]] = {}
    variants: dict[str, dict[str, Any]] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        body = _strip_comment(raw)
        if not body.strip():
            continue
        m = LINE.match(body)
        if not m:
            raise ConfigError(f"{source}: expected 'key = value'", line=number)
        key, value_text = m.group(1), m.group(2)
        if key in lines:
            raise ConfigError(f"{source}: duplicate key (first set on line {lines[key]})", key, number)
        lines[key] = number
        if key.startswith("meta."):
            continue
        if key.startswith("grid.") and key != "grid.max_cells":
            target = key[len("grid."):]
            if target == "run.label" or target.startswith(("grid.", "variant.")):
                raise ConfigError("this key cannot be a grid axis", key, number)
            parts = [p for p in value_text.split(",") if p.strip()]
            if not parts:
                raise ConfigError("grid axis needs at least one value", key, number)
            if isinstance(parse_value(target, parts[0], number), tuple):
                raise ConfigError("grid axes must be scalar settings", key, number)
            axes[target] = tuple(parse_value(target, p, number) for p in parts)
            continue
        vm = VARIANT_KEY.fullmatch(key)
        if vm:
            variants.setdefault(vm.group(1), {})[vm.group(2)] = parse_value(vm.group(2), value_text, number)
            continue
        if key.startswith("variant."):
            raise ConfigError("variant keys look like variant.<name>.<key>", key, number)
        values[key] = parse_value(key, value_text, number)
    try:
        base = resolve(values, lines)
    except ConfigError as exc:
        if exc.line is None and exc.key in lines:
            raise ConfigError(str(exc).split(": ", 1)[-1], exc.key, lines[exc.key]) from None
        raise
    grid = GridSpec(base, axes, variants)
    grid.cells()  # validates every cell and the cell cap
    return grid


def parse_grid(path) -> GridSpec:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_text(text, str(path))


def parse_config(path) -> ExperimentConfig:
    """Parse a single-run config; grid axes or variants are rejected."""
    grid = parse_grid(path)
    if grid.axes or grid.variants:
        raise ConfigError(f"{path} defines grid axes or variants; use 'fedfault grid'")
    return grid.base


def describe_schema() -> str:
    entries = [(key, spec) for key, spec in SCHEMA.items()]
    entries += [(f"scenario.client.<k>.{name}", spec) for name, spec in CLIENT_FIELDS.items()]
    entries += [(f"site.<k>.{name}", spec) for name, spec in SITE_FIELDS.items()]
    rows = []
    for key, spec in entries:
        if spec.default is REQUIRED:
            default = "(required)"
        elif spec.default is None:
            default = "-"
        else:
            default = format_value(spec.default)
        rows.append(f"{key:37s} {default:11s} {spec.doc}".rstrip())
    return "\n".join(rows)
