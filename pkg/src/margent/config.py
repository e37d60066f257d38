"""Run configurations: schema validation and resolution into library objects."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import catalog
from .conic import Tolerances
from .operators import DensityOperator, QuditRegister, density_from_json
from .statesearch import ConstraintSet, default_post_measurement
from .witness import MarginalPattern, party_index

COMMANDS = ("verify", "search", "tolerance", "audit", "uniqueness", "localizable")
STATE_COMMANDS = ("verify", "tolerance", "audit", "uniqueness", "localizable")

# command-specific options and their defaults
OPTIONS: dict[str, dict[str, Any]] = {
    "verify": {"tolerance": False, "unrestricted": True, "noise": 0.0},
    "search": {"max_rounds": 50, "polish_rounds": 10, "stall_tol": 1e-6},
    "tolerance": {"mode": "marginal-restricted", "width": 1e-4},
    "audit": {"triples": False, "noise": 0.0},
    "uniqueness": {"jobs": 1},
    "localizable": {"party": None, "grid": [60, 120], "max_evals": 200},
}
CONSTRAINT_KEYS = {"two_body", "three_body", "post_measurement"}
POST_MEASUREMENT_KEYS = {"count", "eps", "parties"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    state: str | None = None
    input_file: str | None = None
    params: dict = field(default_factory=dict)
    dims: list[int] | None = None
    pattern: str | None = None
    constraints: dict = field(default_factory=dict)
    seed: int | None = None
    tolerances: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    output: str | None = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.command in STATE_COMMANDS and (self.state is None) == (self.input_file is None):
            raise ConfigError(f"{self.command} needs exactly one of 'state' or 'input_file'")
        if self.command == "search":
            if self.seed is None:
                raise ConfigError("search needs an explicit integer seed")
            if self.dims is None and self.state is None:
                raise ConfigError("search needs 'dims' or a catalog 'state' to take the register from")
        if self.seed is not None and (not isinstance(self.seed, int) or isinstance(self.seed, bool)):
            raise ConfigError("seed must be an integer")
        unknown = set(self.constraints) - CONSTRAINT_KEYS
        if unknown:
            raise ConfigError(f"unknown constraint fields {sorted(unknown)}")
        pm = self.constraints.get("post_measurement")
        if pm is not None:
            if not isinstance(pm, dict) or set(pm) - POST_MEASUREMENT_KEYS:
                raise ConfigError(f"post_measurement takes the fields {sorted(POST_MEASUREMENT_KEYS)}")
        tol_fields = {f.name for f in dataclasses.fields(Tolerances)}
        unknown = set(self.tolerances) - tol_fields
        if unknown:
            raise ConfigError(f"unknown tolerance fields {sorted(unknown)}")
        allowed = OPTIONS[self.command]
        unknown = set(self.options) - set(allowed)
        if unknown:
            raise ConfigError(f"unknown options for {self.command}: {sorted(unknown)}")
        self.options = {**allowed, **self.options}

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        if "command" not in data:
            raise ConfigError("config lacks 'command'")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(data)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    # -- resolution ----------------------------------------------------------
    def resolve_state(self) -> tuple[DensityOperator, catalog.CatalogEntry | None]:
        if self.state is not None:
            try:
                entry = catalog.build(self.state, **self.params)
            except TypeError as exc:
                raise ConfigError(f"bad parameters for {self.state}: {exc}") from None
            return entry.state, entry
        try:
            data = json.loads(Path(self.input_file).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read state file {self.input_file}: {exc}") from None
        return density_from_json(data), None

    def resolve_register(self) -> QuditRegister:
        if self.dims is not None:
            return QuditRegister(tuple(int(d) for d in self.dims))
        return self.resolve_state()[0].register

    def resolve_pattern(self, register: QuditRegister, entry: catalog.CatalogEntry | None = None) -> MarginalPattern:
        """The configured pattern; unset means the catalog entry's pattern, else all pairs."""
        text = self.pattern
        if text is None:
            text = entry.expected.get("pattern", "all") if entry is not None else "all"
        try:
            return MarginalPattern.parse(register, text)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"bad pattern {self.pattern!r}: {exc}") from None

    def resolve_tolerances(self) -> Tolerances:
        return Tolerances(**self.tolerances)

    def resolve_constraints(self, register: QuditRegister) -> ConstraintSet:
        c = self.constraints
        two = c.get("two_body", "all")
        pairs = None if two in (None, "all") else tuple(MarginalPattern.parse(register, two).pairs)
        three = c.get("three_body") or ()
        if three == "all":
            three = register.triples()
        elif isinstance(three, str):
            three = [register.check_parties(party_index(ch) for ch in tok) for tok in three.replace(" ", "").split(",")]
        else:
            three = [register.check_parties(t) for t in three]
        pm = ()
        pm_cfg = c.get("post_measurement")
        if pm_cfg and pm_cfg.get("count", 0) > 0:
            pm = default_post_measurement(register, int(pm_cfg["count"]), float(pm_cfg.get("eps", 1e-4)),
                                          pm_cfg.get("parties"))
        return ConstraintSet(pairs, tuple(three), pm)

