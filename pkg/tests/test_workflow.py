import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agility.errors import IllegalTransition, InvalidProcess, ParseError
from agility.events import Event, EventBus, Source
from agility.model import Instance, InstanceKey, SetAttribute, SituationModel
from agility.workflow import (
    END,
    LEGAL_TRANSITIONS,
    START,
    ActivityDef,
    ActivityInstance,
    ActivityState,
    Edge,
    Guard,
    ProcessDefinition,
    WorkflowEngine,
    guard_from_dict,
    guard_to_dict,
    process_from_dict,
    process_to_dict,
)

FIRE = InstanceKey("Risk", "fire1")
EXTINGUISH = SetAttribute(FIRE, "status", "extinguished")


def linear(d1=5000, d2=1000):
    return ProcessDefinition("lin", (
        ActivityDef("a1", "s1", d1, (EXTINGUISH,)),
        ActivityDef("a2", "s2", d2),
    ), (Edge(START, "a1"), Edge("a1", "a2"), Edge("a2", END)))


def diamond(guard_a=None, guard_b=None, da=100, db=300):
    return ProcessDefinition("dia", (
        ActivityDef("A", "sa", da),
        ActivityDef("B", "sb", db),
        ActivityDef("J", "sj", 10),
    ), (Edge(START, "A", guard_a), Edge(START, "B", guard_b), Edge("A", "J"), Edge("B", "J"), Edge("J", END)))


def states(engine):
    return {i.activity_id: i.state for i in engine.activities()}


def test_linear_start_invokes_first_activity():
    engine = WorkflowEngine()
    events = engine.start_process(linear(), 0)
    assert [(e.event_type, e.payload["activity_id"]) for e in events] == [("activity.invoked", "a1")]
    assert states(engine) == {"a1": ActivityState.INVOKED}
    assert engine.activities()[0].started_at == 0


def test_parallel_split_invokes_both():
    engine = WorkflowEngine()
    events = engine.start_process(diamond(), 0)
    assert sorted(e.payload["activity_id"] for e in events) == ["A", "B"]
    assert all(e.payload["state"] == "invoked" for e in events)


def test_cycle_is_rejected():
    cyc = ProcessDefinition("c", (ActivityDef("a", "s"), ActivityDef("b", "s")),
                            (Edge(START, "a"), Edge("a", "b"), Edge("b", "a")))
    with pytest.raises(InvalidProcess):
        WorkflowEngine().start_process(cyc, 0)


def test_unreachable_and_unknown_service_rejected():
    unreachable = ProcessDefinition("u", (ActivityDef("a", "s"), ActivityDef("b", "s")), (Edge(START, "a"),))
    with pytest.raises(InvalidProcess, match="unreachable"):
        unreachable.check()
    with pytest.raises(InvalidProcess, match="unresolvable"):
        WorkflowEngine(services=["s1"]).start_process(linear(), 0)
    with pytest.raises(InvalidProcess):
        ProcessDefinition("x", (ActivityDef("a", "s"),), (Edge(START, "zz"),)).check()


def test_timer_boundary():
    engine = WorkflowEngine()
    engine.start_process(linear(), 0)
    (ev,) = engine.tick(1)
    assert ev.event_type == "activity.in_progress" and ev.payload["previous"] == "invoked"
    assert engine.tick(4999) == []
    assert states(engine)["a1"] is ActivityState.IN_PROGRESS
    done, invoked = engine.tick(5000)
    assert done.event_type == "activity.completed"
    assert done.effects == (EXTINGUISH,)
    assert invoked.payload["activity_id"] == "a2"


def test_next_due_tracks_timers():
    engine = WorkflowEngine()
    assert engine.next_due(0) is None
    engine.start_process(linear(), 0)
    assert engine.next_due(0) == 1
    engine.tick(1)
    assert engine.next_due(1) == 5000


def test_zero_duration_completes_on_first_tick():
    engine = WorkflowEngine()
    engine.start_process(linear(d1=0), 0)
    assert [e.event_type for e in engine.tick(1)] == ["activity.in_progress", "activity.completed", "activity.invoked"]


def test_interrupt_running_activities():
    engine = WorkflowEngine()
    engine.start_process(diamond(), 0)
    engine.tick(1)
    events = engine.interrupt_all(2, "replan")
    assert len(events) == 2
    assert {e.payload["reason"] for e in events} == {"replan"}
    assert not engine.is_running
    engine.start_process(linear(), 3)
    assert engine.current_process_id == "lin"


def test_interrupt_leaves_completed_untouched():
    engine = WorkflowEngine()
    engine.start_process(diamond(), 0)
    engine.tick(1)
    engine.tick(100)
    assert states(engine)["A"] is ActivityState.COMPLETED
    events = engine.interrupt_all(150, "x")
    assert [e.payload["activity_id"] for e in events] == ["B"]
    assert states(engine)["A"] is ActivityState.COMPLETED


def test_interrupt_idle_engine():
    assert WorkflowEngine().interrupt_all(0, "x") == []


def test_cannot_start_while_running():
    engine = WorkflowEngine()
    engine.start_process(linear(), 0)
    with pytest.raises(InvalidProcess):
        engine.start_process(diamond(), 1)


def test_join_fires_once_after_all_branches():
    engine = WorkflowEngine()
    engine.start_process(diamond(), 0)
    log = []
    for t in range(1, 400):
        log.extend(engine.tick(t))
    join_invokes = [e for e in log if e.payload["activity_id"] == "J" and e.event_type == "activity.invoked"]
    assert len(join_invokes) == 1
    b_done = next(e for e in log if e.payload["activity_id"] == "B" and e.event_type == "activity.completed")
    assert join_invokes[0].timestamp == b_done.timestamp == 300
    assert states(engine)["J"] is ActivityState.COMPLETED


def test_failed_guard_skips_branch_and_join_still_fires():
    guard = Guard("exists", InstanceKey("Risk", "missing"))
    engine = WorkflowEngine()
    engine.start_process(diamond(guard_b=guard), 0)
    assert set(states(engine)) == {"A"}
    for t in range(1, 200):
        engine.tick(t)
    assert states(engine)["J"] is ActivityState.COMPLETED
    assert "B" not in states(engine)


def test_all_branches_skipped_skips_join():
    never = Guard("exists", InstanceKey("Risk", "missing"))
    engine = WorkflowEngine()
    assert engine.start_process(diamond(never, never), 0) == []
    assert not engine.is_running


def test_guards_read_the_field_model():
    field = SituationModel([Instance(FIRE, {"status": "active"})])
    engine = WorkflowEngine(field_view=lambda: field)
    guard = Guard("equals", FIRE, "status", "active")
    engine.start_process(diamond(guard_b=guard, guard_a=Guard("equals", FIRE, "status", "active", negate=True)), 0)
    assert set(states(engine)) == {"B"}


def test_service_failure_interrupts_bound_activity_on_next_tick():
    bus = EventBus()
    engine = WorkflowEngine(bus)
    engine.listen_for_failures(bus)
    engine.start_process(diamond(), 0)
    bus.publish(Event("f1", "service_failure", 0, bus.next_seq(), Source.FIELD, payload={"service_id": "sb"}))
    assert states(engine)["B"] is ActivityState.INVOKED
    events = engine.tick(1)
    assert events[0].payload == {"process_id": "dia", "activity_id": "B", "service_id": "sb",
                                 "state": "interrupted", "previous": "invoked", "reason": "service_failure"}


def test_monitoring_events_are_published_with_monitoring_source():
    bus = EventBus()
    seen = []
    for state in ActivityState:
        bus.subscribe("obs", state.event_type, seen.append)
    engine = WorkflowEngine(bus)
    returned = engine.start_process(linear(), 0)
    for t in (1, 5000, 5001, 6001):
        returned += engine.tick(t)
    assert seen == returned
    assert all(e.source is Source.MONITORING for e in seen)
    for e in seen:
        expected = engine.history[0] if e.payload["activity_id"] == "a1" else engine.history[1]
        if e.event_type == "activity.completed":
            adef = linear().activity(expected.activity_id)
            assert e.effects == adef.expected_effects
        else:
            assert e.effects == ()


def test_terminal_states_are_immutable():
    inst = ActivityInstance("p", "a", "s", ActivityState.INVOKED, 0)
    inst.transition(ActivityState.INTERRUPTED, 1)
    with pytest.raises(IllegalTransition):
        inst.transition(ActivityState.IN_PROGRESS, 2)
    with pytest.raises(IllegalTransition):
        ActivityInstance("p", "a", "s", ActivityState.INVOKED, 0).transition(ActivityState.COMPLETED, 1)


def test_clock_cannot_go_backwards():
    engine = WorkflowEngine()
    engine.tick(10)
    with pytest.raises(ValueError):
        engine.tick(9)


def test_process_json_round_trip():
    proc = diamond(guard_a=Guard("equals", FIRE, "status", "x", negate=True),
                   guard_b=Guard("exists", FIRE))
    proc = ProcessDefinition(proc.process_id, proc.activities[:2] + (
        ActivityDef("J", "sj", 10, (EXTINGUISH,), InstanceKey("Objective", "o1")),), proc.edges)
    assert process_from_dict(process_to_dict(proc)) == proc
    assert guard_from_dict(guard_to_dict(Guard("exists", FIRE)), "$") == Guard("exists", FIRE)
    with pytest.raises(ParseError):
        process_from_dict({"process_id": "p"})
    with pytest.raises(ParseError):
        guard_from_dict({"exists": {}, "equals": {}}, "$")


# --- random interleavings ---------------------------------------------------

actions = st.lists(st.tuples(st.sampled_from(["tick", "interrupt", "start", "fail"]), st.integers(0, 400)),
                   max_size=40)


@given(actions, st.sampled_from(["lin", "dia"]))
@settings(max_examples=150)
def test_random_interleavings_only_make_legal_transitions(script, which):
    bus = EventBus()
    engine = WorkflowEngine(bus)
    engine.listen_for_failures(bus)
    now = 0
    events = []
    for action, dt in script:
        now += dt
        proc = linear(300, 50) if which == "lin" else diamond()
        if action == "tick":
            events += engine.tick(now)
        elif action == "interrupt":
            events += engine.interrupt_all(now, "test")
        elif action == "fail":
            engine.fail_service(["s1", "sa", "sb", "sj"][dt % 4])
        elif not engine.is_running:
            events += engine.start_process(proc, now)
    completed_events = 0
    for e in events:
        if "previous" in e.payload:
            pair = (ActivityState(e.payload["previous"]), ActivityState(e.payload["state"]))
            assert pair in LEGAL_TRANSITIONS
        completed_events += e.event_type == "activity.completed"
    # At most one completion per activity instance.
    assert completed_events == sum(1 for i in engine.history if i.state is ActivityState.COMPLETED)
