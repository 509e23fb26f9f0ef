"""Complex event processing over sliding windows.

Three pattern kinds are supported: ``all`` (every listed type, any order),
``seq`` (listed types in strictly increasing ``(timestamp, seq)`` order) and
``count`` (``n`` events of one type).  Each event is consumed by at most one
match per rule.  When several candidate matches exist the earliest
constituents win.
"""

from __future__ import annotations

import enum
import itertools
import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

from .errors import DuplicateRuleId, OutOfOrderFeed, ParseError
from .events import Event, Source
from .model import ModelEffect, effect_to_dict, effects_from_list

logger = logging.getLogger(__name__)


class PatternKind(enum.Enum):
    ALL = "all"
    SEQ = "seq"
    COUNT = "count"


@dataclass(frozen=True)
class CepPattern:
    kind: PatternKind
    types: tuple[str, ...]
    window_ms: int
    n: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "types", tuple(self.types))
        if isinstance(self.window_ms, bool) or not isinstance(self.window_ms, int) or self.window_ms <= 0:
            raise ValueError("window_ms must be a positive integer")
        if not all(isinstance(t, str) and t for t in self.types):
            raise ValueError("pattern types must be non-empty strings")
        if self.kind is PatternKind.ALL:
            if len(self.types) < 2 or len(set(self.types)) != len(self.types):
                raise ValueError("an 'all' pattern needs at least two distinct types")
        elif self.kind is PatternKind.SEQ:
            if len(self.types) < 2:
                raise ValueError("a 'seq' pattern needs at least two steps")
        else:
            if len(self.types) != 1:
                raise ValueError("a 'count' pattern takes exactly one type")
            if isinstance(self.n, bool) or not isinstance(self.n, int) or self.n < 2:
                raise ValueError("a 'count' pattern needs n >= 2")

    @classmethod
    def all_of(cls, types: list[str] | tuple[str, ...], window_ms: int) -> CepPattern:
        return cls(PatternKind.ALL, tuple(types), window_ms)

    @classmethod
    def sequence_of(cls, types: list[str] | tuple[str, ...], window_ms: int) -> CepPattern:
        return cls(PatternKind.SEQ, tuple(types), window_ms)

    @classmethod
    def count_of(cls, event_type: str, n: int, window_ms: int) -> CepPattern:
        return cls(PatternKind.COUNT, (event_type,), window_ms, n)

    @property
    def input_types(self) -> frozenset[str]:
        return frozenset(self.types)

    @property
    def size(self) -> int:
        return self.n if self.kind is PatternKind.COUNT else len(self.types)


@dataclass(frozen=True)
class CepRule:
    rule_id: str
    pattern: CepPattern
    output_type: str
    output_source: Source = Source.FIELD
    effects: tuple[ModelEffect, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "effects", tuple(self.effects))
        if not self.rule_id:
            raise ValueError("rule_id must be non-empty")
        if not self.output_type:
            raise ValueError("output_type must be non-empty")
        if self.output_type in self.pattern.input_types:
            raise ValueError(f"rule {self.rule_id}: output type {self.output_type!r} is also an input")
        if self.output_source not in (Source.FIELD, Source.MONITORING):
            raise ValueError("output_source must be field or monitoring")


def _match_all(pattern: CepPattern, buffer: list[Event], event: Event) -> list[Event] | None:
    picked = [event]
    for t in pattern.types:
        if t == event.event_type:
            continue
        hit = next((b for b in buffer if b.event_type == t), None)
        if hit is None:
            return None
        picked.append(hit)
    return picked


def _match_seq(pattern: CepPattern, buffer: list[Event], event: Event) -> list[Event] | None:
    if pattern.types[-1] != event.event_type:
        return None
    picked = []
    i = 0
    for t in pattern.types[:-1]:
        while i < len(buffer) and buffer[i].event_type != t:
            i += 1
        if i == len(buffer):
            return None
        picked.append(buffer[i])
        i += 1
    picked.append(event)
    return picked


def _match_count(pattern: CepPattern, buffer: list[Event], event: Event) -> list[Event] | None:
    same = [b for b in buffer if b.event_type == event.event_type][: pattern.n - 1]
    if len(same) < pattern.n - 1:
        return None
    return same + [event]


_MATCHERS = {PatternKind.ALL: _match_all, PatternKind.SEQ: _match_seq, PatternKind.COUNT: _match_count}


@dataclass
class _RuleState:
    rule: CepRule
    buffer: list[Event] = field(default_factory=list)
    fired: int = 0


class CepEngine:
    """Feeds ordered events through registered rules and returns the complex events they create."""

    def __init__(self, seq_source: Callable[[], int] | None = None) -> None:
        counter = itertools.count()
        self._next_seq = seq_source or (lambda: next(counter))
        self._states: list[_RuleState] = []
        self._last_ts: int | None = None
        #: (rule_id, constituent event ids, emitted event id) for every match, in order.
        self.match_log: list[tuple[str, tuple[str, ...], str]] = []

    def register_rule(self, rule: CepRule) -> None:
        if any(s.rule.rule_id == rule.rule_id for s in self._states):
            raise DuplicateRuleId(rule.rule_id)
        self._states.append(_RuleState(rule))

    def list_rules(self) -> list[CepRule]:
        return [s.rule for s in self._states]

    @property
    def input_types(self) -> frozenset[str]:
        return frozenset().union(*(s.rule.pattern.input_types for s in self._states))

    def buffered(self, rule_id: str) -> list[Event]:
        return next(list(s.buffer) for s in self._states if s.rule.rule_id == rule_id)

    def feed(self, event: Event) -> list[Event]:
        if self._last_ts is not None and event.timestamp < self._last_ts:
            raise OutOfOrderFeed(f"event {event.id} at t={event.timestamp} after t={self._last_ts}")
        self._last_ts = event.timestamp
        now = event.timestamp

        emitted = []
        for state in self._states:
            pattern = state.rule.pattern
            # Half-open window: an event exactly window_ms old is already expired.
            state.buffer = [b for b in state.buffer if b.timestamp > now - pattern.window_ms]
            if event.event_type not in pattern.input_types:
                continue
            match = _MATCHERS[pattern.kind](pattern, state.buffer, event)
            if match is None:
                state.buffer.append(event)
                continue
            used = {id(m) for m in match}
            state.buffer = [b for b in state.buffer if id(b) not in used]
            emitted.append(self._emit(state, match, event))
        return emitted

    def _emit(self, state: _RuleState, match: list[Event], completing: Event) -> Event:
        state.fired += 1
        rule = state.rule
        payload: dict[str, Any] = {}
        for m in sorted(match, key=lambda e: e.order_key):
            payload.update(m.payload)
        out = Event(
            id=f"cep:{rule.rule_id}:{state.fired}",
            event_type=rule.output_type,
            timestamp=completing.timestamp,
            seq=self._next_seq(),
            source=Source.CEP,
            effects=rule.effects,
            payload=payload,
            route=rule.output_source,
        )
        self.match_log.append((rule.rule_id, tuple(m.id for m in sorted(match, key=lambda e: e.order_key)), out.id))
        logger.debug("rule %s fired on %s -> %s", rule.rule_id, [m.id for m in match], out.id)
        return out


def rule_to_dict(rule: CepRule) -> dict[str, Any]:
    pattern: dict[str, Any] = {
        "kind": rule.pattern.kind.value,
        "types": list(rule.pattern.types),
        "window_ms": rule.pattern.window_ms,
    }
    if rule.pattern.n is not None:
        pattern["n"] = rule.pattern.n
    return {
        "rule_id": rule.rule_id,
        "pattern": pattern,
        "output_type": rule.output_type,
        "output_source": rule.output_source.value,
        "effects": [effect_to_dict(e) for e in rule.effects],
    }


def rule_from_dict(data: Any, path: str = "$") -> CepRule:
    if not isinstance(data, dict) or not isinstance(data.get("pattern"), dict):
        raise ParseError("expected a rule object with a pattern", path=path)
    p = data["pattern"]
    try:
        pattern = CepPattern(
            PatternKind(p["kind"]),
            tuple(p["types"]),
            p["window_ms"],
            p.get("n"),
        )
        return CepRule(
            rule_id=data["rule_id"],
            pattern=pattern,
            output_type=data["output_type"],
            output_source=Source(data.get("output_source", "field")),
            effects=effects_from_list(data.get("effects", []), f"{path}.effects"),
        )
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r}", path=path) from None
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), path=path) from None


def rules_from_list(data: Any, path: str = "$") -> list[CepRule]:
    if not isinstance(data, list):
        raise ParseError("rule file must be a JSON array", path=path)
    return [rule_from_dict(r, f"{path}[{i}]") for i, r in enumerate(data)]
