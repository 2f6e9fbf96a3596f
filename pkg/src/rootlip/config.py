"""Scenario configuration files: strict JSON parsing and dotted overrides."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields

from .initial import FAMILIES
from .solver import SolverConfig
from .transform import DomainCase

SCHEMA_VERSION = 1
SCENARIOS = ("solve", "blowup", "cut_paste", "fbsde", "convergence_study")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class InitialSpec:
    family: str = "quadratic"
    params: dict = field(default_factory=dict)
    # path to a two-column CSV (x, u0); replaces the family when set
    table: str | None = None


@dataclass(frozen=True)
class ExperimentSpec:
    # blowup
    lam: float = 0.1
    target_b: float | None = None
    ladder: tuple = (1e2, 1e3, 1e4)
    size_ladder: tuple = (1.0, 0.5, 0.25)
    # cut_paste
    left_length: float = 1.0
    left_A: float = 1.0
    right_length: float = 1.0
    right_A: float = 1.0
    gap: float = 0.5
    nx: int = 1601
    # fbsde
    x0: float = 1.0
    T: float = 0.5
    n_paths: int = 100_000
    dt_sde: float | None = None
    n_bins: int = 20
    dump_terminal: bool = False
    # convergence_study
    levels: int = 3
    dt_power: float = 2.0


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "solve"
    case: DomainCase = field(default_factory=lambda: DomainCase("line"))
    initial: InitialSpec = field(default_factory=InitialSpec)
    solver: SolverConfig = field(default_factory=SolverConfig)
    experiment: ExperimentSpec = field(default_factory=ExperimentSpec)
    override: bool = False
    output_dir: str | None = None
    seed: int = 0

    def to_dict(self) -> dict:
        exp = asdict(self.experiment)
        exp["ladder"] = list(exp["ladder"])
        exp["size_ladder"] = list(exp["size_ladder"])
        return {"spec": SCHEMA_VERSION, "scenario": self.scenario,
                "case": self.case.to_dict(),
                "initial": {"family": self.initial.family, "params": dict(self.initial.params),
                            "table": self.initial.table},
                "solver": self.solver.to_dict(), "experiment": exp,
                "override": self.override, "output_dir": self.output_dir, "seed": self.seed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


_TUPLE_FIELDS = {"blowup_thresholds", "y_range", "snapshot_times", "ladder", "size_ladder"}


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kw = {}
    for k, v in data.items():
        if k in _TUPLE_FIELDS and v is not None:
            if not isinstance(v, (list, tuple)):
                raise ConfigError(f"{where}.{k} must be a list")
            v = tuple(v)
        kw[k] = v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_config(data: dict) -> ScenarioConfig:
    """Strictly parse a config mapping; unknown keys anywhere are errors."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    data = copy.deepcopy(data)
    version = data.pop("spec", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(f'config needs "spec": {SCHEMA_VERSION}, got {version!r}')
    top = {f.name for f in fields(ScenarioConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    scenario = data.get("scenario", "solve")
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    kw = {"scenario": scenario}
    if "case" in data:
        kw["case"] = _build(DomainCase, data["case"], "case")
    if "initial" in data:
        init = _build(InitialSpec, data["initial"], "initial")
        if init.table is None and init.family not in FAMILIES:
            raise ConfigError(f"unknown initial family {init.family!r}; known: {sorted(FAMILIES)}")
        if not isinstance(init.params, dict):
            raise ConfigError("initial.params must be an object")
        kw["initial"] = init
    if "solver" in data:
        kw["solver"] = _build(SolverConfig, data["solver"], "solver")
    if "experiment" in data:
        kw["experiment"] = _build(ExperimentSpec, data["experiment"], "experiment")
    for k in ("override", "output_dir", "seed"):
        if k in data:
            kw[k] = data[k]
    if not isinstance(kw.get("override", False), bool):
        raise ConfigError("override must be true or false")
    if not isinstance(kw.get("seed", 0), int) or kw.get("seed", 0) < 0:
        raise ConfigError("seed must be a nonnegative integer")
    return ScenarioConfig(**kw)


def load_config(path) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return parse_config(data)


# flag spellings accepted besides full dotted paths
ALIASES = {
    "scenario": "scenario",
    "case": "case.kind",
    "gamma": "case.gamma",
    "kappa": "case.kappa",
    "K": "case.K",
    "L": "case.L",
    "u0": "initial.family",
    "t-end": "solver.t_end",
    "t_end": "solver.t_end",
    "dy": "solver.dy",
    "bc": "solver.bc_mode",
    "lambda": "experiment.lam",
    "seed": "seed",
    "output": "output_dir",
    "override": "override",
}


def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, pairs) -> dict:
    """Set dotted paths in a raw config mapping from (key, text) pairs."""
    data = copy.deepcopy(data)
    for key, text in pairs:
        path = ALIASES.get(key, key).split(".")
        node = data
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override {key}: {part} is not an object")
        node[path[-1]] = _coerce(text)
    return data
