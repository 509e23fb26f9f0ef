"""Deterministic discrete-event driver for the whole detection/adaptation loop.

Each visited logical timestamp runs the same phases in order: inject due
field events, tick the workflow engine, feed new events through the CEP
engine, deliver everything to the agility service, then evaluate divergence
if the cadence says so.  The clock jumps to the next timestamp at which
something is scheduled.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .cep import CepEngine
from .divergence import DivergenceReport, compute_divergence
from .errors import ScenarioValidationError
from .events import Event, EventBus, EventInbox, event_to_line
from .model import SituationModel, diff, serialize
from .scenario import Scenario, check_scenario
from .service import AdaptationRecord, AgilityService
from .workflow import WorkflowEngine

logger = logging.getLogger(__name__)


@dataclass
class RunResult:
    events: list[Event]
    timeline: list[DivergenceReport]
    timeline_records: list[dict[str, Any]]
    adaptations: list[AdaptationRecord]
    expected: SituationModel
    field: SituationModel
    summary: dict[str, Any]
    warnings: list[str] = field(default_factory=list)
    event_log: Path | None = None


def _jsonl(records: list[dict[str, Any]]) -> str:
    return "".join(json.dumps(r, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"
                   for r in records)


def run(scenario: Scenario, out_dir: str | Path | None = None) -> RunResult:
    problems = check_scenario(scenario)
    if problems:
        raise ScenarioValidationError(problems)
    wall_start = time.perf_counter()

    bus = EventBus()
    registry = scenario.registry
    service: AgilityService | None = None
    engine = WorkflowEngine(bus, services=registry.ids, field_view=lambda: service.field)
    engine.listen_for_failures(bus)
    service = AgilityService(scenario.initial_model, scenario.agility, registry, engine, bus)

    cep = CepEngine(seq_source=bus.next_seq)
    for rule in scenario.cep_rules:
        cep.register_rule(rule)
    cep_inbox = EventInbox("cep_engine")
    cep_inbox.attach(bus, cep.input_types)
    svc_inbox = EventInbox("agility_service")
    svc_inbox.attach(bus, scenario.tracked_types)

    def settle() -> None:
        while len(cep_inbox):
            for ev in cep_inbox.take():
                for out in cep.feed(ev):
                    bus.publish(out)
        for ev in svc_inbox.take():
            service.on_event(ev)

    every = scenario.agility.eval_every_ms
    pending = list(scenario.field_timeline)
    n_field = 0
    now = 0
    engine.start_process(scenario.process, now)
    while True:
        while pending and pending[0].timestamp == now:
            n_field += 1
            bus.publish(pending.pop(0).instantiate(bus.next_seq(), f"field:{n_field}"))
        engine.tick(now)
        settle()
        if every is None or now % every == 0:
            service.evaluate(now)
            settle()
        if now >= scenario.end_ms:
            break
        candidates = [scenario.end_ms]
        if pending:
            candidates.append(pending[0].timestamp)
        due = engine.next_due(now)
        if due is not None:
            candidates.append(due)
        if every is not None:
            candidates.append((now // every + 1) * every)
        now = min(c for c in candidates if c > now)

    final = compute_divergence(diff(service.expected, service.field), scenario.agility.weights,
                               scenario.agility.cost, scenario.agility.nature_table,
                               evaluated_at=scenario.end_ms)
    events = bus.drain_ordered()
    summary = {
        "scenario": scenario.name,
        "n_events": len(events),
        "n_evaluations": len(service.divergence_timeline()),
        "n_adaptations": len(service.adaptations),
        "final_divergence": final.total,
        "wall_clock_s": round(time.perf_counter() - wall_start, 6),
    }
    result = RunResult(
        events=events,
        timeline=service.divergence_timeline(),
        timeline_records=service.timeline_records(),
        adaptations=service.adaptations,
        expected=service.expected,
        field=service.field,
        summary=summary,
        warnings=list(service.warnings),
    )
    if out_dir is not None:
        result.event_log = write_outputs(result, service.initial, Path(out_dir))
    logger.info("scenario %s: %d events, %d adaptations, final divergence %s",
                scenario.name, len(events), len(service.adaptations), final.total)
    return result


def write_outputs(result: RunResult, initial: SituationModel, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    log = out_dir / "events.jsonl"
    log.write_text("".join(event_to_line(e) + "\n" for e in result.events), encoding="utf-8")
    (out_dir / "divergence.jsonl").write_text(_jsonl(result.timeline_records), encoding="utf-8")
    (out_dir / "adaptations.jsonl").write_text(_jsonl([a.to_dict() for a in result.adaptations]),
                                               encoding="utf-8")
    models = out_dir / "final_models"
    models.mkdir(exist_ok=True)
    (models / "initial.json").write_text(serialize(initial), encoding="utf-8")
    (models / "expected.json").write_text(serialize(result.expected), encoding="utf-8")
    (models / "field.json").write_text(serialize(result.field), encoding="utf-8")
    # Wall-clock data lives only here so the logs stay byte-reproducible.
    (out_dir / "summary.json").write_text(json.dumps(result.summary, sort_keys=True, indent=2) + "\n",
                                          encoding="utf-8")
    return log


def _is_meta(line: str) -> bool:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError:
        return False
    return isinstance(obj, dict) and "_meta" in obj


def replay_check(log_a: str | Path, log_b: str | Path) -> bool:
    """True iff both logs are byte-identical once ``_meta`` lines are dropped."""
    a = Path(log_a).read_bytes().decode("utf-8").splitlines(keepends=True)
    b = Path(log_b).read_bytes().decode("utf-8").splitlines(keepends=True)
    return [ln for ln in a if not _is_meta(ln)] == [ln for ln in b if not _is_meta(ln)]
