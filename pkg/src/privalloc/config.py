"""Experiment configuration: a flat ``key = value`` format with repeatable sections.

Grammar::

    file     := line*
    line     := blank | comment | header | entry
    comment  := '#' text
    header   := '[' name ']'           name in {population, strategy, sweep}
    entry    := key '=' value
    value    := item (',' item)*       lists are comma separated
    item     := int | float | 'inf' | 'true' | 'false' | bare word

Entries before the first header are global (``seed``, ``trials``,
``output``). ``[strategy]`` may repeat; the other sections may not.
"""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path

from privalloc.synth import GENERATORS, PopulationSpec

SWEEP_AXES = ("psi", "lambda", "k", "G", "sigma")
_SECTIONS = ("population", "strategy", "sweep")
_GLOBAL_KEYS = ("seed", "trials", "output")
_POP_KEYS = ("generator", "M", "N", "delta_w", "binary")


class ConfigError(ValueError):
    """Malformed or incomplete experiment configuration."""


@dataclasses.dataclass(frozen=True)
class StrategyConfig:
    name: str
    params: dict = dataclasses.field(default_factory=dict)

    @property
    def label(self) -> str:
        return str(self.params.get("label", self.name))


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """Population recipe, strategies, parameter grid and Monte Carlo settings."""

    population: PopulationSpec
    strategies: tuple[StrategyConfig, ...]
    sweep: dict
    trials: int = 1
    seed: int = 0
    output: str | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if not self.strategies:
            raise ConfigError("at least one [strategy] section is required")
        if not self.sweep or "k" not in self.sweep:
            raise ConfigError("the [sweep] section must list at least k")
        for axis, values in self.sweep.items():
            if axis not in SWEEP_AXES:
                raise ConfigError(f"unknown sweep axis {axis!r}; allowed: {SWEEP_AXES}")
            if not values:
                raise ConfigError(f"sweep axis {axis} is empty")
        labels = [s.label for s in self.strategies]
        if len(set(labels)) != len(labels):
            raise ConfigError("strategy labels must be unique; set label = ... to disambiguate")

    @property
    def axes(self) -> list[str]:
        return [a for a in SWEEP_AXES if a in self.sweep]

    @property
    def grid(self) -> list[dict]:
        """Cartesian product of the sweep axes, last axis varying fastest."""
        points = [{}]
        for axis in self.axes:
            points = [{**p, axis: v} for p in points for v in self.sweep[axis]]
        return points

    def with_overrides(self, seed=None, trials=None, output=None) -> "ExperimentConfig":
        kw = {}
        if seed is not None:
            kw["seed"] = seed
        if trials is not None:
            kw["trials"] = trials
        if output is not None:
            kw["output"] = output
        return dataclasses.replace(self, **kw)


def parse_value(text: str):
    """Parses one scalar item."""
    t = text.strip()
    low = t.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("inf", "+inf"):
        return math.inf
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        return t


def _parse_entry(line: str, lineno: int) -> tuple[str, list]:
    if "=" not in line:
        raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
    key, _, raw = line.partition("=")
    key = key.strip()
    if not key:
        raise ConfigError(f"line {lineno}: missing key")
    items = [parse_value(v) for v in raw.split(",")]
    if any(v == "" for v in items):
        raise ConfigError(f"line {lineno}: empty value for {key}")
    return key, items


def _scalar(key, items):
    if len(items) != 1:
        raise ConfigError(f"{key} takes a single value")
    return items[0]


def parse_config(text: str) -> ExperimentConfig:
    """Parses configuration text into an :class:`ExperimentConfig`."""
    glob: dict = {}
    pop: dict | None = None
    sweep: dict | None = None
    strategies: list[dict] = []
    current = glob
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: unterminated section header")
            name = line[1:-1].strip()
            if name not in _SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section [{name}]")
            if name == "strategy":
                current = {}
                strategies.append(current)
            elif name == "population":
                if pop is not None:
                    raise ConfigError("[population] may appear once")
                pop = current = {}
            else:
                if sweep is not None:
                    raise ConfigError("[sweep] may appear once")
                sweep = current = {}
            continue
        key, items = _parse_entry(line, lineno)
        if key in current:
            raise ConfigError(f"line {lineno}: duplicate key {key}")
        current[key] = items

    missing = [s for s, v in (("population", pop), ("sweep", sweep)) if v is None]
    if not strategies:
        missing.append("strategy")
    if missing:
        raise ConfigError("missing required sections: " + ", ".join(f"[{m}]" for m in missing)
                          + "; required fields: population.generator, population.M, "
                            "population.N, strategy.name, sweep.k")
    for key in glob:
        if key not in _GLOBAL_KEYS:
            raise ConfigError(f"unknown global key {key!r}")
    return ExperimentConfig(
        population=_population(pop),
        strategies=tuple(_strategy(s) for s in strategies),
        sweep={a: tuple(v) for a, v in sweep.items()},
        trials=int(_scalar("trials", glob.get("trials", [1]))),
        seed=int(_scalar("seed", glob.get("seed", [0]))),
        output=(str(_scalar("output", glob["output"])) if "output" in glob else None),
    )


def _population(d: dict) -> PopulationSpec:
    s = {k: _scalar(k, v) for k, v in d.items()}
    for key in ("generator", "M", "N"):
        if key not in s:
            raise ConfigError(f"population.{key} is required")
    if s["generator"] not in GENERATORS:
        raise ConfigError(f"population.generator must be one of {GENERATORS}")
    M, N = int(s["M"]), int(s["N"])
    params = {k: float(v) for k, v in s.items() if k not in _POP_KEYS}
    try:
        return PopulationSpec(
            P=M * N, M=M, N=N, delta_w=float(s.get("delta_w", 1.0)),
            generator=s["generator"], params=_with_sweepable(s["generator"], params),
            binary=bool(s.get("binary", False)))
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _with_sweepable(generator: str, params: dict) -> dict:
    # G and k can come from the sweep instead of the population section.
    fill = {"gini_target": {"G": math.nan}, "hard_instance": {"k": math.nan}}.get(generator, {})
    return {**fill, **params}


def _strategy(d: dict) -> StrategyConfig:
    s = {k: _scalar(k, v) for k, v in d.items()}
    if "name" not in s:
        raise ConfigError("strategy.name is required")
    name = str(s.pop("name"))
    return StrategyConfig(name, s)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(text)
