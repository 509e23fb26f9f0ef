"""Typed events and an in-process, type-routed publish/subscribe bus."""

from __future__ import annotations

import enum
import itertools
import json
import logging
import threading
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any

from .errors import DuplicateSubscription, ParseError
from .model import ModelEffect, Scalar, _check_scalar, effect_to_dict, effects_from_list

logger = logging.getLogger(__name__)


class Source(enum.Enum):
    MONITORING = "monitoring"
    FIELD = "field"
    CEP = "cep"


@dataclass(frozen=True)
class Event:
    """One published occurrence.

    ``route`` only applies to CEP-created events and names the model
    (``FIELD`` or ``MONITORING``) their effects belong to.
    """

    id: str
    event_type: str
    timestamp: int
    seq: int
    source: Source
    effects: tuple[ModelEffect, ...] = ()
    payload: Mapping[str, Scalar] = field(default_factory=dict)
    route: Source | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("event id must be non-empty")
        if not isinstance(self.event_type, str) or not self.event_type:
            raise ValueError("event_type must be a non-empty string")
        if isinstance(self.timestamp, bool) or not isinstance(self.timestamp, int) or self.timestamp < 0:
            raise ValueError(f"timestamp must be an integer >= 0, got {self.timestamp!r}")
        if isinstance(self.seq, bool) or not isinstance(self.seq, int) or self.seq < 0:
            raise ValueError(f"seq must be an integer >= 0, got {self.seq!r}")
        if self.route is Source.CEP:
            raise ValueError("route must be FIELD or MONITORING")
        payload = dict(self.payload)
        for k, v in payload.items():
            _check_scalar(v, f"payload.{k}")
        object.__setattr__(self, "payload", MappingProxyType(payload))
        object.__setattr__(self, "effects", tuple(self.effects))

    @property
    def order_key(self) -> tuple[int, int]:
        return (self.timestamp, self.seq)

    @property
    def model_route(self) -> Source | None:
        """Which model this event's effects update, or None for none."""
        if self.source is Source.CEP:
            return self.route
        return self.source


def event_to_dict(event: Event) -> dict[str, Any]:
    out: dict[str, Any] = {
        "id": event.id,
        "type": event.event_type,
        "ts": event.timestamp,
        "seq": event.seq,
        "source": event.source.value,
        "effects": [effect_to_dict(e) for e in event.effects],
        "payload": {k: event.payload[k] for k in sorted(event.payload)},
    }
    if event.route is not None:
        out["route"] = event.route.value
    return out


def event_to_line(event: Event) -> str:
    return json.dumps(event_to_dict(event), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def event_from_dict(data: Any, path: str = "$") -> Event:
    if not isinstance(data, dict):
        raise ParseError("expected an event object", path=path)
    try:
        route = data.get("route")
        return Event(
            id=data["id"],
            event_type=data["type"],
            timestamp=data["ts"],
            seq=data["seq"],
            source=Source(data["source"]),
            effects=effects_from_list(data.get("effects", []), f"{path}.effects"),
            payload=data.get("payload", {}),
            route=Source(route) if route is not None else None,
        )
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r}", path=path) from None
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), path=path) from None


Handler = Callable[[Event], None]


@dataclass(frozen=True)
class Subscription:
    subscriber_id: str
    event_type: str
    handle: int


class EventBus:
    """Synchronous bus routing events by exact ``event_type`` match.

    Publishes are serialized: every delivery of one event finishes before the
    next publish starts.  Handlers must not publish from inside a delivery.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._seq = itertools.count()
        self._seq_lock = threading.Lock()
        self._handles = itertools.count(1)
        self._subs: dict[str, list[tuple[Subscription, Handler]]] = {}
        self._pairs: set[tuple[str, str]] = set()
        self._log: list[Event] = []
        self._delivering = threading.local()

    def next_seq(self) -> int:
        with self._seq_lock:
            return next(self._seq)

    def subscribe(self, subscriber_id: str, event_type: str, handler: Handler) -> Subscription:
        pair = (subscriber_id, event_type)
        with self._lock:
            if pair in self._pairs:
                raise DuplicateSubscription(f"{subscriber_id!r} already subscribed to {event_type!r}")
            sub = Subscription(subscriber_id, event_type, next(self._handles))
            self._pairs.add(pair)
            self._subs.setdefault(event_type, []).append((sub, handler))
            return sub

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            entries = self._subs.get(sub.event_type, [])
            self._subs[sub.event_type] = [(s, h) for s, h in entries if s.handle != sub.handle]
            self._pairs.discard((sub.subscriber_id, sub.event_type))

    def subscribers(self, event_type: str) -> list[str]:
        return [s.subscriber_id for s, _ in self._subs.get(event_type, [])]

    def publish(self, event: Event) -> int:
        """Log ``event`` and hand it to every subscriber of its type; return the delivery count."""
        if getattr(self._delivering, "active", False):
            raise RuntimeError("publish called from inside a delivery")
        with self._lock:
            self._log.append(event)
            targets = list(self._subs.get(event.event_type, ()))
            self._delivering.active = True
            try:
                for _, handler in targets:
                    handler(event)
            finally:
                self._delivering.active = False
        logger.debug("published %s (%s) to %d subscriber(s)", event.id, event.event_type, len(targets))
        return len(targets)

    @property
    def log(self) -> tuple[Event, ...]:
        """Events in publish order."""
        return tuple(self._log)

    def drain_ordered(self) -> list[Event]:
        """Every published event sorted by ``(timestamp, seq)``; the log is kept."""
        with self._lock:
            return sorted(self._log, key=lambda e: e.order_key)


class EventInbox:
    """Subscriber that buffers deliveries until the owner takes them."""

    def __init__(self, name: str) -> None:
        self.name = name
        self._pending: list[Event] = []
        self._subs: list[Subscription] = []

    def __call__(self, event: Event) -> None:
        self._pending.append(event)

    def attach(self, bus: EventBus, event_types: Iterable[str]) -> None:
        for t in sorted(set(event_types)):
            self._subs.append(bus.subscribe(self.name, t, self))

    def __len__(self) -> int:
        return len(self._pending)

    def take(self) -> list[Event]:
        out = sorted(self._pending, key=lambda e: e.order_key)
        self._pending.clear()
        return out
