"""Orchestration of process definitions with simulated service timers.

Every activity follows the state machine ``invoked -> in_progress ->
completed`` and may be interrupted from either non-terminal state.  Each
transition is published as a monitoring event of type ``activity.<state>``;
completion events carry the activity's expected effects.

Branching: an activity with several outgoing edges is a parallel split; one
with several incoming edges is a join that waits until every incoming edge
is decided.  Guarded edges whose guard fails are skipped, and a node whose
incoming edges are all skipped is skipped in turn, so joins never wait on a
branch that will not run.
"""

from __future__ import annotations

import enum
import graphlib
import itertools
import logging
from collections.abc import Callable, Iterable
from dataclasses import dataclass
from typing import Any

from .errors import IllegalTransition, InvalidProcess, ParseError
from .events import Event, EventBus, Source
from .model import (
    InstanceKey,
    ModelEffect,
    Scalar,
    SituationModel,
    effect_to_dict,
    effects_from_list,
    key_from_dict,
    key_to_dict,
    same_scalar,
)

logger = logging.getLogger(__name__)

START = "START"
END = "END"
SERVICE_FAILURE = "service_failure"


class ActivityState(enum.Enum):
    INVOKED = "invoked"
    IN_PROGRESS = "in_progress"
    COMPLETED = "completed"
    INTERRUPTED = "interrupted"

    @property
    def terminal(self) -> bool:
        return self in (ActivityState.COMPLETED, ActivityState.INTERRUPTED)

    @property
    def event_type(self) -> str:
        return f"activity.{self.value}"


LEGAL_TRANSITIONS = frozenset({
    (ActivityState.INVOKED, ActivityState.IN_PROGRESS),
    (ActivityState.IN_PROGRESS, ActivityState.COMPLETED),
    (ActivityState.INVOKED, ActivityState.INTERRUPTED),
    (ActivityState.IN_PROGRESS, ActivityState.INTERRUPTED),
})

MONITORING_TYPES = tuple(s.event_type for s in ActivityState)


@dataclass(frozen=True)
class Guard:
    """``exists``: the instance is in the field model.  ``equals``: its attribute equals ``value``."""

    kind: str
    key: InstanceKey
    name: str | None = None
    value: Scalar | None = None
    negate: bool = False

    def __post_init__(self) -> None:
        if self.kind not in ("exists", "equals"):
            raise ValueError(f"unknown guard kind {self.kind!r}")
        if self.kind == "equals" and (not self.name or self.value is None):
            raise ValueError("an 'equals' guard needs name and value")

    def holds(self, model: SituationModel) -> bool:
        inst = model.get(self.key)
        if self.kind == "exists":
            ok = inst is not None
        else:
            ok = inst is not None and self.name in inst.attributes and same_scalar(inst.attributes[self.name], self.value)
        return ok != self.negate


@dataclass(frozen=True)
class ActivityDef:
    activity_id: str
    service_id: str
    duration_ms: int = 0
    expected_effects: tuple[ModelEffect, ...] = ()
    serves_objective: InstanceKey | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "expected_effects", tuple(self.expected_effects))
        if not self.activity_id or self.activity_id in (START, END):
            raise ValueError(f"invalid activity id {self.activity_id!r}")
        if isinstance(self.duration_ms, bool) or not isinstance(self.duration_ms, int) or self.duration_ms < 0:
            raise ValueError(f"{self.activity_id}: duration_ms must be an integer >= 0")


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    guard: Guard | None = None


@dataclass(frozen=True)
class ProcessDefinition:
    process_id: str
    activities: tuple[ActivityDef, ...]
    edges: tuple[Edge, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "activities", tuple(self.activities))
        object.__setattr__(self, "edges", tuple(self.edges))

    def activity(self, activity_id: str) -> ActivityDef:
        return next(a for a in self.activities if a.activity_id == activity_id)

    def check(self, known_services: Iterable[str] | None = None) -> None:
        """Raise :class:`InvalidProcess` unless the graph is a valid acyclic, fully reachable process."""
        ids = [a.activity_id for a in self.activities]
        if len(set(ids)) != len(ids):
            raise InvalidProcess(f"{self.process_id}: duplicate activity ids")
        known = set(ids)
        for e in self.edges:
            if e.source != START and e.source not in known:
                raise InvalidProcess(f"{self.process_id}: edge from unknown node {e.source!r}")
            if e.target != END and e.target not in known:
                raise InvalidProcess(f"{self.process_id}: edge to unknown node {e.target!r}")
            if e.source == e.target:
                raise InvalidProcess(f"{self.process_id}: self-loop on {e.source!r}")

        graph: dict[str, set[str]] = {a: set() for a in ids}
        for e in self.edges:
            if e.source in known and e.target in known:
                graph[e.target].add(e.source)
        try:
            tuple(graphlib.TopologicalSorter(graph).static_order())
        except graphlib.CycleError as exc:
            raise InvalidProcess(f"{self.process_id}: cycle through {exc.args[1]}") from None

        reached = set()
        frontier = [e.target for e in self.edges if e.source == START and e.target != END]
        while frontier:
            node = frontier.pop()
            if node in reached:
                continue
            reached.add(node)
            frontier.extend(e.target for e in self.edges if e.source == node and e.target != END)
        unreachable = sorted(known - reached)
        if unreachable:
            raise InvalidProcess(f"{self.process_id}: unreachable activities {unreachable}")

        if known_services is not None:
            services = set(known_services)
            missing = sorted({a.service_id for a in self.activities} - services)
            if missing:
                raise InvalidProcess(f"{self.process_id}: unresolvable services {missing}")


@dataclass
class ActivityInstance:
    process_id: str
    activity_id: str
    service_id: str
    state: ActivityState
    started_at: int
    ended_at: int | None = None

    def transition(self, new: ActivityState, now: int) -> ActivityState:
        old = self.state
        if (old, new) not in LEGAL_TRANSITIONS:
            raise IllegalTransition(f"{self.activity_id}: {old.value} -> {new.value}")
        self.state = new
        if new.terminal:
            self.ended_at = now
        return old


class _Run:
    def __init__(self, definition: ProcessDefinition) -> None:
        self.definition = definition
        self.edge_state: list[bool | None] = [None] * len(definition.edges)
        self.instances: dict[str, ActivityInstance] = {}
        self.skipped: set[str] = set()
        self.order = {a.activity_id: i for i, a in enumerate(definition.activities)}

    def incoming(self, node: str) -> list[int]:
        return [i for i, e in enumerate(self.definition.edges) if e.target == node]

    def outgoing(self, node: str) -> list[int]:
        return [i for i, e in enumerate(self.definition.edges) if e.source == node]

    @property
    def active(self) -> bool:
        return any(not i.state.terminal for i in self.instances.values())


class WorkflowEngine:
    """Runs one process definition at a time against a logical clock.

    ``field_view`` supplies the model that edge guards are evaluated on.
    With a ``bus`` every monitoring event is published as well as returned.
    """

    def __init__(
        self,
        bus: EventBus | None = None,
        services: Iterable[str] | None = None,
        field_view: Callable[[], SituationModel] | None = None,
    ) -> None:
        self._bus = bus
        self._services = None if services is None else frozenset(services)
        self._field_view = field_view or SituationModel
        counter = itertools.count()
        self._local_seq = lambda: next(counter)
        self._event_ids = itertools.count(1)
        self._run: _Run | None = None
        self._history: list[ActivityInstance] = []
        self._failed: list[str] = []
        self._now = 0

    # -- wiring -----------------------------------------------------------

    def listen_for_failures(self, bus: EventBus, subscriber_id: str = "workflow_engine") -> None:
        """Queue ``service_failure`` events; bound activities are interrupted on the next tick."""
        bus.subscribe(subscriber_id, SERVICE_FAILURE, self._on_failure)

    def _on_failure(self, event: Event) -> None:
        sid = event.payload.get("service_id")
        if isinstance(sid, str):
            self._failed.append(sid)

    def fail_service(self, service_id: str) -> None:
        self._failed.append(service_id)

    # -- inspection -------------------------------------------------------

    @property
    def current_process_id(self) -> str | None:
        return self._run.definition.process_id if self._run else None

    @property
    def is_running(self) -> bool:
        return self._run is not None and self._run.active

    def activities(self) -> list[ActivityInstance]:
        """Instances of the current run in definition order."""
        if self._run is None:
            return []
        run = self._run
        return sorted(run.instances.values(), key=lambda i: run.order[i.activity_id])

    @property
    def history(self) -> list[ActivityInstance]:
        return list(self._history)

    def next_due(self, now: int) -> int | None:
        """Earliest logical time after ``now`` at which a tick changes something."""
        due = [
            max(i.started_at + self._run.definition.activity(i.activity_id).duration_ms, now + 1)
            if i.state is ActivityState.IN_PROGRESS else now + 1
            for i in self.activities() if not i.state.terminal
        ]
        return min(due) if due else None

    # -- operations -------------------------------------------------------

    def start_process(self, definition: ProcessDefinition, now: int) -> list[Event]:
        definition.check(self._services)
        if self.is_running:
            raise InvalidProcess(f"cannot start {definition.process_id}: {self.current_process_id} still running")
        self._advance_clock(now)
        self._run = _Run(definition)
        events: list[Event] = []
        self._decide_edges(START, now, events)
        logger.info("started process %s at t=%d", definition.process_id, now)
        return events

    def tick(self, now: int) -> list[Event]:
        self._advance_clock(now)
        events: list[Event] = []
        if self._failed:
            failed, self._failed = set(self._failed), []
            for inst in self.activities():
                if not inst.state.terminal and inst.service_id in failed:
                    self._transition(inst, ActivityState.INTERRUPTED, now, events, reason="service_failure")
        if self._run is None:
            return events

        completed = []
        for inst in self.activities():
            if inst.state is ActivityState.INVOKED:
                self._transition(inst, ActivityState.IN_PROGRESS, now, events)
            if inst.state is ActivityState.IN_PROGRESS:
                adef = self._run.definition.activity(inst.activity_id)
                if inst.started_at + adef.duration_ms <= now:
                    self._transition(inst, ActivityState.COMPLETED, now, events, effects=adef.expected_effects)
                    completed.append(inst.activity_id)
        for activity_id in completed:
            self._decide_edges(activity_id, now, events)
        return events

    def interrupt_all(self, now: int, reason: str) -> list[Event]:
        self._advance_clock(now)
        events: list[Event] = []
        for inst in self.activities():
            if not inst.state.terminal:
                self._transition(inst, ActivityState.INTERRUPTED, now, events, reason=reason)
        if events:
            logger.info("interrupted %d activities at t=%d: %s", len(events), now, reason)
        return events

    # -- internals --------------------------------------------------------

    def _advance_clock(self, now: int) -> None:
        if now < self._now:
            raise ValueError(f"clock went backwards: {now} < {self._now}")
        self._now = now

    def _decide_edges(self, node: str, now: int, events: list[Event], fired: bool = True) -> None:
        run = self._run
        field = self._field_view() if fired else None
        targets = []
        for i in run.outgoing(node):
            edge = run.definition.edges[i]
            run.edge_state[i] = fired and (edge.guard is None or edge.guard.holds(field))
            if edge.target != END:
                targets.append(edge.target)
        for target in sorted(set(targets), key=run.order.__getitem__):
            if target in run.instances or target in run.skipped:
                continue
            states = [run.edge_state[i] for i in run.incoming(target)]
            if any(s is None for s in states):
                continue
            if any(states):
                self._invoke(target, now, events)
            else:
                run.skipped.add(target)
                self._decide_edges(target, now, events, fired=False)

    def _invoke(self, activity_id: str, now: int, events: list[Event]) -> None:
        adef = self._run.definition.activity(activity_id)
        inst = ActivityInstance(self._run.definition.process_id, activity_id, adef.service_id,
                                ActivityState.INVOKED, started_at=now)
        self._run.instances[activity_id] = inst
        self._history.append(inst)
        events.append(self._emit(inst, now))

    def _transition(self, inst: ActivityInstance, new: ActivityState, now: int, events: list[Event],
                    effects: tuple[ModelEffect, ...] = (), reason: str | None = None) -> None:
        old = inst.transition(new, now)
        events.append(self._emit(inst, now, effects, previous=old, reason=reason))

    def _emit(self, inst: ActivityInstance, now: int, effects: tuple[ModelEffect, ...] = (),
              previous: ActivityState | None = None, reason: str | None = None) -> Event:
        payload: dict[str, Any] = {
            "process_id": inst.process_id,
            "activity_id": inst.activity_id,
            "service_id": inst.service_id,
            "state": inst.state.value,
        }
        if previous is not None:
            payload["previous"] = previous.value
        if reason is not None:
            payload["reason"] = reason
        seq = self._bus.next_seq() if self._bus else self._local_seq()
        event = Event(
            id=f"mon:{next(self._event_ids)}",
            event_type=inst.state.event_type,
            timestamp=now,
            seq=seq,
            source=Source.MONITORING,
            effects=effects,
            payload=payload,
        )
        if self._bus is not None:
            self._bus.publish(event)
        return event


# --- JSON form ---------------------------------------------------------------

def guard_from_dict(data: Any, path: str) -> Guard:
    if not isinstance(data, dict) or len({"exists", "equals"} & set(data)) != 1:
        raise ParseError("guard must have exactly one of 'exists' or 'equals'", path=path)
    kind = "exists" if "exists" in data else "equals"
    body = data[kind]
    try:
        key = key_from_dict(body, f"{path}.{kind}")
        return Guard(kind, key, body.get("name"), body.get("value"), bool(data.get("negate", False)))
    except (TypeError, ValueError, AttributeError) as exc:
        raise ParseError(str(exc), path=path) from None


def guard_to_dict(guard: Guard) -> dict[str, Any]:
    body: dict[str, Any] = key_to_dict(guard.key)
    if guard.kind == "equals":
        body["name"] = guard.name
        body["value"] = guard.value
    out: dict[str, Any] = {guard.kind: body}
    if guard.negate:
        out["negate"] = True
    return out


def process_from_dict(data: Any, path: str = "$") -> ProcessDefinition:
    if not isinstance(data, dict):
        raise ParseError("expected a process object", path=path)
    try:
        activities = []
        for i, a in enumerate(data["activities"]):
            apath = f"{path}.activities[{i}]"
            obj = a.get("serves_objective")
            activities.append(ActivityDef(
                activity_id=a["activity_id"],
                service_id=a["service_id"],
                duration_ms=a.get("duration_ms", 0),
                expected_effects=effects_from_list(a.get("expected_effects", []), f"{apath}.expected_effects"),
                serves_objective=key_from_dict(obj, f"{apath}.serves_objective") if obj is not None else None,
            ))
        edges = []
        for i, e in enumerate(data.get("edges", [])):
            g = e.get("guard")
            edges.append(Edge(e["from"], e["to"], guard_from_dict(g, f"{path}.edges[{i}].guard") if g else None))
        return ProcessDefinition(data["process_id"], tuple(activities), tuple(edges))
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r}", path=path) from None
    except (TypeError, ValueError, AttributeError) as exc:
        raise ParseError(str(exc), path=path) from None


def process_to_dict(definition: ProcessDefinition) -> dict[str, Any]:
    acts = []
    for a in definition.activities:
        item: dict[str, Any] = {
            "activity_id": a.activity_id,
            "service_id": a.service_id,
            "duration_ms": a.duration_ms,
            "expected_effects": [effect_to_dict(e) for e in a.expected_effects],
        }
        if a.serves_objective is not None:
            item["serves_objective"] = key_to_dict(a.serves_objective)
        acts.append(item)
    edges = []
    for e in definition.edges:
        item = {"from": e.source, "to": e.target}
        if e.guard is not None:
            item["guard"] = guard_to_dict(e.guard)
        edges.append(item)
    return {"process_id": definition.process_id, "activities": acts, "edges": edges}
