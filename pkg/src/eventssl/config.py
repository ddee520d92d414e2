"""JSON run configuration: one file with optional sections per pipeline stage.

Top-level keys::

    seed        master seed for the PMU layout, event draws and the benchmark (default 0)
    generator   GeneratorConfig fields except ``seed``
    counts      event count per class name, e.g. {"LL": 500, ...}
    signatures  per-class ClassSignature overrides (replace the default for that class)
    extraction  ExtractionConfig fields
    plan        ExperimentPlan fields except ``master_seed``

Each subcommand requires only the sections it uses.  Missing fields inside a
section take their defaults; unknown keys are errors.
"""
from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .dataset import EventClass, ExperimentPlan, _json_default
from .modal import ExtractionConfig
from .synth import DEFAULT_SIGNATURES, ClassSignature, GeneratorConfig

TOP_LEVEL = ("seed", "generator", "counts", "signatures", "extraction", "plan")
REQUIRED = {
    "generate": ("generator", "counts"),
    "extract": ("extraction",),
    "run": ("plan",),
    "report": (),
}


class ConfigError(ValueError):
    """Invalid configuration; the CLI exits with status 2."""


def _fields(cls) -> set:
    return {f.name for f in dataclasses.fields(cls)}


def _section(raw: dict, name: str, cls, exclude=()) -> dict:
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config key {name!r} must be an object")
    allowed = _fields(cls) - set(exclude)
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    return sec


@dataclasses.dataclass
class RunConfig:
    seed: int
    generator: GeneratorConfig
    counts: dict
    signatures: dict
    extraction: ExtractionConfig
    plan: ExperimentPlan

    def to_dict(self) -> dict:
        gen = self.generator.to_dict()
        gen.pop("seed")
        plan = self.plan.to_dict()
        plan.pop("master_seed")
        return {
            "seed": self.seed,
            "generator": gen,
            "counts": {EventClass(c).name: n for c, n in self.counts.items()},
            "signatures": {EventClass(c).name: s.to_dict() for c, s in sorted(self.signatures.items())},
            "extraction": dataclasses.asdict(self.extraction),
            "plan": plan,
        }

    def write(self, path: "str | Path") -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, default=_json_default) + "\n")
        return path


def parse_config(raw: dict, command: "str | None" = None, seed: "int | None" = None) -> RunConfig:
    """Validate ``raw`` and fill in defaults; ``seed`` overrides the file's seed."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - set(TOP_LEVEL)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    for key in REQUIRED.get(command, ()):
        if key not in raw:
            raise ConfigError(f"missing config key {key!r}")
    master = raw.get("seed", 0) if seed is None else seed
    if not isinstance(master, int) or isinstance(master, bool) or master < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {master!r}")
    try:
        gen = GeneratorConfig.from_dict({**_section(raw, "generator", GeneratorConfig, ("seed",)),
                                         "seed": master})
        counts = {}
        for name, n in raw.get("counts", {}).items():
            if not isinstance(n, int) or isinstance(n, bool) or n < 1:
                raise ConfigError(f"count for {name} must be a positive integer")
            counts[EventClass.parse(name)] = n
        signatures = dict(DEFAULT_SIGNATURES)
        for name, sig in raw.get("signatures", {}).items():
            unknown = set(sig) - _fields(ClassSignature)
            if unknown:
                raise ConfigError(f"unknown keys in signature {name!r}: {sorted(unknown)}")
            signatures[EventClass.parse(name)] = ClassSignature.from_dict(sig)
        extraction = ExtractionConfig(**_section(raw, "extraction", ExtractionConfig))
        plan_raw = dict(_section(raw, "plan", ExperimentPlan, ("master_seed",)))
        if plan_raw.get("combos") is not None:
            plan_raw["combos"] = [tuple(c) for c in plan_raw["combos"]]
        plan = ExperimentPlan(**plan_raw, master_seed=master)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(master, gen, counts, signatures, extraction, plan)


def load_config(path: "str | Path", command: "str | None" = None, seed: "int | None" = None) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(raw, command, seed)
