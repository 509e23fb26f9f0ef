"""Scenario files: everything one simulated run needs."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

from .cep import CepRule, rules_from_list
from .errors import InvalidProcess, ParseError, ScenarioValidationError
from .events import Event, Source
from .model import (
    OBJECTIVE,
    PARTNER,
    InstanceKey,
    ModelEffect,
    Scalar,
    SituationModel,
    effects_from_list,
    loads_json,
    model_from_dict,
    validate,
)
from .service import AgilityConfig, ServiceRegistry, config_from_dict
from .workflow import MONITORING_TYPES, ProcessDefinition, process_from_dict


@dataclass(frozen=True)
class FieldEventTemplate:
    timestamp: int
    event_type: str
    effects: tuple[ModelEffect, ...] = ()
    payload: dict[str, Scalar] = dataclasses.field(default_factory=dict)
    id: str | None = None

    def instantiate(self, seq: int, fallback_id: str) -> Event:
        return Event(self.id or fallback_id, self.event_type, self.timestamp, seq,
                     Source.FIELD, self.effects, self.payload)


@dataclass(frozen=True)
class Scenario:
    name: str
    initial_model: SituationModel
    process: ProcessDefinition
    registry: ServiceRegistry
    cep_rules: tuple[CepRule, ...]
    agility: AgilityConfig
    field_timeline: tuple[FieldEventTemplate, ...]
    end_ms: int

    def with_agility(self, **changes: Any) -> Scenario:
        return dataclasses.replace(self, agility=dataclasses.replace(self.agility, **changes))

    @property
    def tracked_types(self) -> frozenset[str]:
        """Event types the agility service subscribes to."""
        return frozenset(MONITORING_TYPES) | {t.event_type for t in self.field_timeline} | {
            r.output_type for r in self.cep_rules}


def _section(data: dict[str, Any], name: str, base_dir: Path | None, default: Any = None) -> Any:
    value = data.get(name, default)
    if isinstance(value, str) and name != "name":
        # Sections may live in their own file, relative to the scenario.
        path = Path(value)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        try:
            return loads_json(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ParseError(f"cannot read {name} file {path}: {exc.strerror}") from None
    return value


def _timeline_from_list(data: Any, path: str) -> tuple[FieldEventTemplate, ...]:
    if not isinstance(data, list):
        raise ParseError("field_timeline must be an array", path=path)
    out = []
    for i, item in enumerate(data):
        ipath = f"{path}[{i}]"
        if not isinstance(item, dict):
            raise ParseError("expected an object", path=ipath)
        try:
            ts = item["ts"]
            if isinstance(ts, bool) or not isinstance(ts, int) or ts < 0:
                raise ParseError("ts must be an integer >= 0", path=f"{ipath}.ts")
            etype = item["type"]
            if not isinstance(etype, str) or not etype:
                raise ParseError("type must be a non-empty string", path=f"{ipath}.type")
            tmpl = FieldEventTemplate(ts, etype, effects_from_list(item.get("effects", []), f"{ipath}.effects"),
                                      dict(item.get("payload", {})), item.get("id"))
            tmpl.instantiate(0, "probe")  # payload/id validation
            out.append(tmpl)
        except KeyError as exc:
            raise ParseError(f"missing field {exc.args[0]!r}", path=ipath) from None
        except (TypeError, ValueError) as exc:
            raise ParseError(str(exc), path=ipath) from None
    return tuple(out)


def scenario_from_dict(data: Any, base_dir: Path | None = None) -> Scenario:
    """Build a scenario; raise :class:`ScenarioValidationError` on schema or consistency problems."""
    try:
        if not isinstance(data, dict):
            raise ParseError("scenario must be a JSON object")
        end_ms = data.get("end_ms")
        if isinstance(end_ms, bool) or not isinstance(end_ms, int) or end_ms < 0:
            raise ParseError("end_ms must be an integer >= 0", path="$.end_ms")
        scenario = Scenario(
            name=str(data.get("name", "scenario")),
            initial_model=model_from_dict(_section(data, "initial_model", base_dir), "$.initial_model"),
            process=process_from_dict(_section(data, "process", base_dir), "$.process"),
            registry=ServiceRegistry.from_list(_section(data, "registry", base_dir, []), "$.registry"),
            cep_rules=tuple(rules_from_list(_section(data, "cep_rules", base_dir, []), "$.cep_rules")),
            agility=config_from_dict(_section(data, "agility", base_dir, {}), base_dir, "$.agility"),
            field_timeline=_timeline_from_list(data.get("field_timeline", []), "$.field_timeline"),
            end_ms=end_ms,
        )
    except ParseError as exc:
        raise ScenarioValidationError([str(exc)]) from None
    problems = check_scenario(scenario)
    if problems:
        raise ScenarioValidationError(problems)
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioValidationError([f"cannot read {path}: {exc.strerror}"]) from None
    try:
        data = loads_json(text)
    except ParseError as exc:
        raise ScenarioValidationError([str(exc)]) from None
    return scenario_from_dict(data, path.parent)


def check_scenario(scenario: Scenario) -> list[str]:
    """Consistency problems (ordering, dangling references); empty when the scenario is runnable."""
    problems = []
    last = -1
    for i, t in enumerate(scenario.field_timeline):
        if t.timestamp < last:
            problems.append(f"field_timeline[{i}] at t={t.timestamp} is earlier than its predecessor (t={last})")
        last = max(last, t.timestamp)
        if t.timestamp > scenario.end_ms:
            problems.append(f"field_timeline[{i}] at t={t.timestamp} is after end_ms={scenario.end_ms}")
    ids = [t.id for t in scenario.field_timeline if t.id]
    if len(ids) != len(set(ids)):
        problems.append("field_timeline event ids are not unique")

    try:
        scenario.process.check(scenario.registry.ids)
    except InvalidProcess as exc:
        problems.append(str(exc))
    model = scenario.initial_model
    for a in scenario.process.activities:
        if a.serves_objective is not None:
            if a.serves_objective.concept != OBJECTIVE:
                problems.append(f"activity {a.activity_id}: serves_objective {a.serves_objective} is not an Objective")
            elif a.serves_objective not in model:
                problems.append(f"activity {a.activity_id}: objective {a.serves_objective} not in the initial model")
    for s in scenario.registry:
        if s.partner_id is not None and InstanceKey(PARTNER, s.partner_id) not in model:
            problems.append(f"service {s.service_id}: partner {s.partner_id!r} not in the initial model")

    rule_ids = [r.rule_id for r in scenario.cep_rules]
    if len(rule_ids) != len(set(rule_ids)):
        problems.append("cep rule ids are not unique")
    for r in scenario.cep_rules:
        if r.output_type in MONITORING_TYPES:
            problems.append(f"rule {r.rule_id}: output type {r.output_type!r} is reserved for monitoring events")
    return problems


def scenario_warnings(scenario: Scenario) -> list[str]:
    return validate(scenario.initial_model)


def bundled_scenarios() -> dict[str, Path]:
    root = resources.files("agility") / "data" / "scenarios"
    return {p.name.removesuffix(".json"): Path(str(p)) for p in root.iterdir() if p.name.endswith(".json")}


def resolve_scenario_path(ref: str | Path) -> Path:
    """A path to an existing file, or the name of a bundled scenario."""
    path = Path(ref)
    if path.exists():
        return path
    bundled = bundled_scenarios()
    if str(ref) in bundled:
        return bundled[str(ref)]
    return path
