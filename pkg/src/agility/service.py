"""The agility service: divergence tracking, threshold trigger, interrupt-and-replan."""

from __future__ import annotations

import logging
import re
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .divergence import (
    BUILTIN_PROFILES,
    DEFAULT_NATURE_TABLE,
    DEFAULT_PROFILE,
    CostConfig,
    CostMode,
    DivergenceReport,
    NatureRule,
    RedesignLevel,
    WeightTable,
    compute_divergence,
    exceeds_threshold,
    nature_table_from_list,
)
from .errors import AgilityError, NoCapableService, OutOfOrderEvent, ParseError
from .events import Event, EventBus, Source
from .model import (
    OBJECTIVE,
    PARTNER,
    SERVICE,
    InstanceKey,
    ModelEffect,
    SituationModel,
    apply_effect,
    clone_model,
    diff,
    effect_to_dict,
    effects_from_list,
    key_to_dict,
    loads_json,
)
from .workflow import END, START, ActivityDef, Edge, ProcessDefinition, WorkflowEngine

logger = logging.getLogger(__name__)

ADAPTATION_PERFORMED = "adaptation_performed"


@dataclass(frozen=True)
class AgilityConfig:
    threshold: float = 1.0
    eval_every_ms: int | None = None  # None: evaluate at every processed timestamp
    weights: WeightTable = DEFAULT_PROFILE
    cost: CostConfig = CostConfig()
    nature_table: tuple[NatureRule, ...] = DEFAULT_NATURE_TABLE

    def __post_init__(self) -> None:
        object.__setattr__(self, "nature_table", tuple(self.nature_table))
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")
        if self.eval_every_ms is not None and (isinstance(self.eval_every_ms, bool) or self.eval_every_ms <= 0):
            raise ValueError("eval every_ms must be a positive integer")


def load_weight_profile(ref: Any, base_dir: Path | None = None) -> WeightTable:
    """Resolve a weight profile given inline, by builtin name, or by file path."""
    if isinstance(ref, dict):
        return WeightTable.from_dict(ref)
    if not isinstance(ref, str):
        raise ParseError("weights must be a profile object, a builtin name or a path")
    if ref in BUILTIN_PROFILES:
        return BUILTIN_PROFILES[ref]
    path = Path(ref)
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read weight profile {path}: {exc.strerror}") from None
    return WeightTable.from_dict(loads_json(text), str(path))


def config_from_dict(data: Any, base_dir: Path | None = None, path: str = "$") -> AgilityConfig:
    if not isinstance(data, dict):
        raise ParseError("agility config must be an object", path=path)
    ev = data.get("eval", "every_ts")
    if ev == "every_ts":
        every = None
    elif isinstance(ev, dict) and "every_ms" in ev:
        every = ev["every_ms"]
    else:
        raise ParseError("eval must be 'every_ts' or {'every_ms': int}", path=f"{path}.eval")
    try:
        table = data.get("nature_table")
        return AgilityConfig(
            threshold=data.get("threshold", 1.0),
            eval_every_ms=every,
            weights=load_weight_profile(data.get("weights", "default"), base_dir),
            cost=CostConfig(CostMode(data.get("cost_mode", "unit"))),
            nature_table=DEFAULT_NATURE_TABLE if table is None else nature_table_from_list(table, f"{path}.nature_table"),
        )
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), path=path) from None


# --- service registry -----------------------------------------------------

@dataclass(frozen=True)
class RegistryService:
    service_id: str
    capability: str
    partner_id: str | None = None
    duration_ms: int = 0
    expected_effects: tuple[ModelEffect, ...] = ()
    available: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "expected_effects", tuple(self.expected_effects))

    def usable_in(self, field_model: SituationModel) -> bool:
        """Available in the registry, not reported down in the field, and its partner still present."""
        if not self.available:
            return False
        inst = field_model.get(InstanceKey(SERVICE, self.service_id))
        if inst is not None and inst.attributes.get("available") in (False, "false"):
            return False
        if self.partner_id is not None and InstanceKey(PARTNER, self.partner_id) not in field_model:
            return False
        return True


class ServiceRegistry:
    def __init__(self, services: Iterable[RegistryService] = ()) -> None:
        self._services: dict[str, RegistryService] = {}
        for s in services:
            if s.service_id in self._services:
                raise ValueError(f"duplicate service id {s.service_id!r}")
            self._services[s.service_id] = s

    def __iter__(self):
        return iter(self._services[k] for k in sorted(self._services))

    def __len__(self) -> int:
        return len(self._services)

    def __contains__(self, service_id: object) -> bool:
        return service_id in self._services

    def get(self, service_id: str) -> RegistryService:
        return self._services[service_id]

    @property
    def ids(self) -> list[str]:
        return sorted(self._services)

    def select(self, capability: str, field_model: SituationModel) -> RegistryService | None:
        """Usable service with exactly this capability; lowest id wins ties."""
        for s in self:
            if s.capability == capability and s.usable_in(field_model):
                return s
        return None

    def to_list(self) -> list[dict[str, Any]]:
        return [
            {
                "service_id": s.service_id,
                "partner_id": s.partner_id,
                "capability": s.capability,
                "duration_ms": s.duration_ms,
                "expected_effects": [effect_to_dict(e) for e in s.expected_effects],
                "available": s.available,
            }
            for s in self
        ]

    @classmethod
    def from_list(cls, data: Any, path: str = "$") -> ServiceRegistry:
        if not isinstance(data, list):
            raise ParseError("registry must be an array", path=path)
        services = []
        for i, s in enumerate(data):
            spath = f"{path}[{i}]"
            try:
                services.append(RegistryService(
                    service_id=s["service_id"],
                    capability=s["capability"],
                    partner_id=s.get("partner_id"),
                    duration_ms=s.get("duration_ms", 0),
                    expected_effects=effects_from_list(s.get("expected_effects", []), f"{spath}.expected_effects"),
                    available=s.get("available", True),
                ))
            except KeyError as exc:
                raise ParseError(f"missing field {exc.args[0]!r}", path=spath) from None
            except (TypeError, AttributeError) as exc:
                raise ParseError(str(exc), path=spath) from None
        try:
            return cls(services)
        except ValueError as exc:
            raise ParseError(str(exc), path=path) from None


# --- records -----------------------------------------------------------------

@dataclass(frozen=True)
class AdaptationRecord:
    triggered_at: int
    report: DivergenceReport
    level: RedesignLevel
    old_process_id: str | None
    new_process_id: str | None
    replanned_objectives: tuple[InstanceKey, ...]
    unplanned: tuple[InstanceKey, ...] = ()
    errors: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "ts": self.triggered_at,
            "total": self.report.total,
            "level": int(self.level),
            "old_process": self.old_process_id,
            "new_process": self.new_process_id,
            "replanned": [key_to_dict(k) for k in self.replanned_objectives],
            "unplanned": [key_to_dict(k) for k in self.unplanned],
        }


def _is_satisfied(value: Any) -> bool:
    return value is True or value == "true"


_REPLAN_SUFFIX = re.compile(r"\.replan\d+$")


class AgilityService:
    """Keeps the expected and field models, measures their divergence and adapts.

    The expected model only ever receives monitoring effects and the field
    model only field effects; CEP-created events follow their route.
    """

    def __init__(
        self,
        initial: SituationModel,
        config: AgilityConfig = AgilityConfig(),
        registry: ServiceRegistry | None = None,
        engine: WorkflowEngine | None = None,
        bus: EventBus | None = None,
    ) -> None:
        self.config = config
        self.registry = registry or ServiceRegistry()
        self.engine = engine
        self.bus = bus
        self.initial = clone_model(initial, "initial")
        self.expected = clone_model(initial, "expected")
        self.field = clone_model(initial, "field")
        self.last_eval_at: int | None = None
        self.warnings: list[str] = []
        self._last_event_ts: int | None = None
        self._timeline: list[DivergenceReport] = []
        self._triggered: list[bool] = []
        self._adaptations: list[AdaptationRecord] = []

    # -- tracking -----------------------------------------------------------

    def on_event(self, event: Event) -> None:
        if self._last_event_ts is not None and event.timestamp < self._last_event_ts:
            raise OutOfOrderEvent(f"event {event.id} at t={event.timestamp} after t={self._last_event_ts}")
        self._last_event_ts = event.timestamp
        route = event.model_route
        if route is None or not event.effects:
            return
        for effect in event.effects:
            try:
                if route is Source.MONITORING:
                    self.expected = apply_effect(self.expected, effect)
                else:
                    self.field = apply_effect(self.field, effect)
            except AgilityError as exc:
                msg = f"t={event.timestamp} {event.id}: skipped effect ({exc})"
                logger.warning(msg)
                self.warnings.append(msg)

    # -- detection ----------------------------------------------------------

    def evaluate(self, now: int) -> DivergenceReport:
        cfg = self.config
        report = compute_divergence(diff(self.expected, self.field), cfg.weights, cfg.cost,
                                    cfg.nature_table, evaluated_at=now)
        self.last_eval_at = now
        triggered = exceeds_threshold(report, cfg.threshold)
        self._timeline.append(report)
        self._triggered.append(triggered)
        if triggered:
            logger.info("t=%d divergence %.6g > %.6g, adapting", now, report.total, cfg.threshold)
            self.adapt(now, report)
        return report

    def divergence_timeline(self) -> list[DivergenceReport]:
        return list(self._timeline)

    def timeline_records(self) -> list[dict[str, Any]]:
        return [
            {
                "ts": r.evaluated_at,
                "total": r.total,
                "level": None if r.level is None else int(r.level),
                "triggered": t,
                "n_diffs": r.n_diffs,
            }
            for r, t in zip(self._timeline, self._triggered)
        ]

    @property
    def adaptations(self) -> list[AdaptationRecord]:
        return list(self._adaptations)

    # -- adaptation ---------------------------------------------------------

    def unmet_objectives(self) -> list[InstanceKey]:
        return [o.key for o in self.field.of_concept(OBJECTIVE)
                if not _is_satisfied(o.attributes.get("satisfied"))]

    def adapt(self, now: int, report: DivergenceReport | None = None) -> AdaptationRecord:
        if report is None:
            cfg = self.config
            report = compute_divergence(diff(self.expected, self.field), cfg.weights, cfg.cost,
                                        cfg.nature_table, evaluated_at=now)
        # Unclassified divergence still re-enters at the shallowest stage.
        level = report.level if report.level is not None else RedesignLevel.DEPLOYMENT
        n = len(self._adaptations) + 1
        old_process = self.engine.current_process_id if self.engine else None

        if self.engine is not None:
            self.engine.interrupt_all(now, reason=f"adaptation {n} (level {int(level)})")

        activities = []
        planned, unplanned, errors = [], [], []
        for key in self.unmet_objectives():
            capability = self.field[key].attributes.get("required_capability")
            svc = self.registry.select(capability, self.field) if isinstance(capability, str) else None
            if svc is None:
                err = NoCapableService(key, capability if isinstance(capability, str) else None)
                logger.warning("adaptation %d: %s", n, err)
                unplanned.append(key)
                errors.append(str(err))
                continue
            planned.append(key)
            activities.append(ActivityDef(
                activity_id=f"{key.id}@{svc.service_id}",
                service_id=svc.service_id,
                duration_ms=svc.duration_ms,
                expected_effects=svc.expected_effects,
                serves_objective=key,
            ))

        new_process = None
        if activities:
            root = _REPLAN_SUFFIX.sub("", old_process) if old_process else "process"
            new_process = f"{root}.replan{n}"
            edges = [Edge(START, a.activity_id) for a in activities] + [Edge(a.activity_id, END) for a in activities]
            definition = ProcessDefinition(new_process, tuple(activities), tuple(edges))
            if self.engine is not None:
                self.engine.start_process(definition, now)

        self.expected = clone_model(self.field, "expected")

        record = AdaptationRecord(now, report, level, old_process, new_process,
                                  tuple(planned), tuple(unplanned), tuple(errors))
        self._adaptations.append(record)
        if self.bus is not None:
            self.bus.publish(Event(
                id=f"agility:adapt:{n}",
                event_type=ADAPTATION_PERFORMED,
                timestamp=now,
                seq=self.bus.next_seq(),
                source=Source.CEP,
                payload={
                    "level": int(level),
                    "total": report.total,
                    "new_process": new_process or "",
                    "n_unplanned": len(unplanned),
                },
            ))
        logger.info("adaptation %d at t=%d: level %d, new process %s, unplanned %s",
                    n, now, level, new_process, [str(k) for k in unplanned])
        return record
