"""Weighted divergence between an expected and a field situation model.

The divergence is ``sum(w_i * c_i)`` over the differences of the two
models, where ``c_i`` in [0, 1] is the cost of the differing instance and
``w_i`` a predetermined weight looked up by ``(concept, operation)``.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from typing import Any

from .errors import ParseError
from .model import OBJECTIVE, PARTNER, RESOURCE, RISK, SERVICE, ACTIVITY, Difference, Operation, key_to_dict


class RedesignLevel(enum.IntEnum):
    """Design stage an adaptation re-enters; lower is deeper."""

    SITUATION = 1
    CARTOGRAPHY = 2
    DEPLOYMENT = 3


class CostMode(enum.Enum):
    UNIT = "unit"
    PROPORTIONAL = "proportional"


@dataclass(frozen=True)
class CostConfig:
    mode: CostMode = CostMode.UNIT


@dataclass(frozen=True)
class WeightTable:
    entries: Mapping[tuple[str, Operation], float] = field(default_factory=dict)
    default_weight: float = 1.0

    def __post_init__(self) -> None:
        entries = dict(self.entries)
        for (concept, op), w in entries.items():
            if not isinstance(op, Operation):
                raise TypeError(f"weight key operation must be an Operation, got {op!r}")
            if not (isinstance(w, (int, float)) and not isinstance(w, bool)) or not math.isfinite(w) or w < 0:
                raise ValueError(f"weight for ({concept}, {op.value}) must be a finite number >= 0")
        if not math.isfinite(self.default_weight) or self.default_weight < 0:
            raise ValueError("default weight must be a finite number >= 0")
        object.__setattr__(self, "entries", {k: float(v) for k, v in entries.items()})
        object.__setattr__(self, "default_weight", float(self.default_weight))

    def weight(self, concept: str, operation: Operation) -> float:
        return self.entries.get((concept, operation), self.default_weight)

    def scaled(self, k: float) -> WeightTable:
        if k <= 0:
            raise ValueError("scale factor must be > 0")
        return WeightTable({key: w * k for key, w in self.entries.items()}, self.default_weight * k)

    def to_dict(self) -> dict[str, Any]:
        return {
            "default": self.default_weight,
            "entries": [
                {"concept": c, "operation": op.value, "weight": w}
                for (c, op), w in sorted(self.entries.items(), key=lambda kv: (kv[0][0], kv[0][1].value))
            ],
        }

    @classmethod
    def from_dict(cls, data: Any, path: str = "$") -> WeightTable:
        if not isinstance(data, dict):
            raise ParseError("weight profile must be an object", path=path)
        try:
            entries = {}
            for i, e in enumerate(data.get("entries", [])):
                key = (e["concept"], Operation(e["operation"]))
                if key in entries:
                    raise ParseError(f"duplicate weight for {key[0]}/{key[1].value}", path=f"{path}.entries[{i}]")
                entries[key] = e["weight"]
            return cls(entries, data.get("default", 1.0))
        except KeyError as exc:
            raise ParseError(f"missing field {exc.args[0]!r}", path=path) from None
        except (TypeError, ValueError) as exc:
            raise ParseError(str(exc), path=path) from None


DEFAULT_PROFILE = WeightTable()

# Values only encode the qualitative ordering: adding a risk hurts more than
# removing one, losing a partner more than gaining one.
CRISIS_PROFILE = WeightTable({
    (RISK, Operation.ADDED): 2.0,
    (RISK, Operation.DELETED): 0.5,
    (PARTNER, Operation.DELETED): 2.0,
    (PARTNER, Operation.ADDED): 0.5,
}, 1.0)

BUILTIN_PROFILES = {"default": DEFAULT_PROFILE, "crisis": CRISIS_PROFILE}


@dataclass(frozen=True)
class NatureRule:
    """Maps differences on ``concept`` to a redesign level.

    ``operation`` None matches every operation; ``attribute`` restricts the
    rule to updates that change that attribute.
    """

    concept: str
    level: RedesignLevel
    operation: Operation | None = None
    attribute: str | None = None

    def matches(self, d: Difference) -> bool:
        if d.key.concept != self.concept:
            return False
        if self.operation is not None and d.operation is not self.operation:
            return False
        if self.attribute is not None and self.attribute not in d.changed_attributes:
            return False
        return True


DEFAULT_NATURE_TABLE: tuple[NatureRule, ...] = (
    NatureRule(PARTNER, RedesignLevel.SITUATION),
    NatureRule(RISK, RedesignLevel.SITUATION),
    NatureRule(OBJECTIVE, RedesignLevel.SITUATION),
    NatureRule(ACTIVITY, RedesignLevel.CARTOGRAPHY),
    NatureRule(RESOURCE, RedesignLevel.CARTOGRAPHY),
    NatureRule(SERVICE, RedesignLevel.CARTOGRAPHY, Operation.ADDED),
    NatureRule(SERVICE, RedesignLevel.CARTOGRAPHY, Operation.DELETED),
    NatureRule(SERVICE, RedesignLevel.CARTOGRAPHY, Operation.UPDATED, "available"),
    # Any other service update is an endpoint/binding change.
    NatureRule(SERVICE, RedesignLevel.DEPLOYMENT, Operation.UPDATED),
)


def nature_table_from_list(data: Any, path: str = "$") -> tuple[NatureRule, ...]:
    if not isinstance(data, list):
        raise ParseError("nature table must be an array", path=path)
    rules = []
    for i, r in enumerate(data):
        try:
            op = r.get("operation")
            rules.append(NatureRule(
                concept=r["concept"],
                level=RedesignLevel(r["level"]),
                operation=None if op in (None, "*") else Operation(op),
                attribute=r.get("attribute"),
            ))
        except KeyError as exc:
            raise ParseError(f"missing field {exc.args[0]!r}", path=f"{path}[{i}]") from None
        except (TypeError, ValueError, AttributeError) as exc:
            raise ParseError(str(exc), path=f"{path}[{i}]") from None
    return tuple(rules)


def nature_table_to_list(table: Iterable[NatureRule]) -> list[dict[str, Any]]:
    out = []
    for r in table:
        item: dict[str, Any] = {"concept": r.concept, "level": int(r.level)}
        if r.operation is not None:
            item["operation"] = r.operation.value
        if r.attribute is not None:
            item["attribute"] = r.attribute
        out.append(item)
    return out


@dataclass(frozen=True)
class Contribution:
    difference: Difference
    cost: float
    weight: float
    weighted: float


@dataclass(frozen=True)
class DivergenceReport:
    total: float
    contributions: tuple[Contribution, ...]
    level: RedesignLevel | None
    evaluated_at: int = 0

    @property
    def n_diffs(self) -> int:
        return len(self.contributions)

    def to_dict(self) -> dict[str, Any]:
        return {
            "evaluated_at": self.evaluated_at,
            "total": self.total,
            "level": None if self.level is None else int(self.level),
            "contributions": [
                {
                    **key_to_dict(c.difference.key),
                    "operation": c.difference.operation.value,
                    "changed_attributes": sorted(c.difference.changed_attributes),
                    "attr_total": c.difference.attr_total,
                    "cost": c.cost,
                    "weight": c.weight,
                    "weighted": c.weighted,
                }
                for c in self.contributions
            ],
        }


def instance_cost(d: Difference, cfg: CostConfig = CostConfig()) -> float:
    if cfg.mode is CostMode.UNIT or d.operation is not Operation.UPDATED:
        return 1.0
    return min(1.0, max(0.0, len(d.changed_attributes) / d.attr_total))


def classify_level(d: Difference, table: Iterable[NatureRule] = DEFAULT_NATURE_TABLE) -> RedesignLevel | None:
    levels = [r.level for r in table if r.matches(d)]
    return min(levels) if levels else None


def classify_nature(diffs: Iterable[Difference],
                    table: Iterable[NatureRule] = DEFAULT_NATURE_TABLE) -> RedesignLevel | None:
    """Deepest level required by any difference, or None if nothing is classified."""
    table = tuple(table)
    levels = [lv for lv in (classify_level(d, table) for d in diffs) if lv is not None]
    return min(levels) if levels else None


def compute_divergence(
    diffs: Iterable[Difference],
    weights: WeightTable = DEFAULT_PROFILE,
    cfg: CostConfig = CostConfig(),
    nature_table: Iterable[NatureRule] = DEFAULT_NATURE_TABLE,
    evaluated_at: int = 0,
) -> DivergenceReport:
    diffs = list(diffs)
    contributions = []
    for d in diffs:
        c = instance_cost(d, cfg)
        w = weights.weight(d.key.concept, d.operation)
        contributions.append(Contribution(d, c, w, w * c))
    # fsum is correctly rounded, so the total does not depend on term order.
    total = math.fsum(c.weighted for c in contributions)
    return DivergenceReport(total, tuple(contributions), classify_nature(diffs, nature_table), evaluated_at)


def exceeds_threshold(report: DivergenceReport, threshold: float) -> bool:
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    return report.total > threshold
