"""Situation models: unordered, keyed stores of typed instances.

A model is a snapshot.  Every mutating operation returns a new
:class:`SituationModel`; instances themselves are immutable, so snapshots can
share them safely.
"""

from __future__ import annotations

import enum
import json
import math
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Union

from .errors import DuplicateInstance, ParseError, UnknownInstance

Scalar = Union[str, int, float, bool]

PARTNER = "Partner"
RISK = "Risk"
RESOURCE = "Resource"
OBJECTIVE = "Objective"
SERVICE = "Service"
ACTIVITY = "Activity"
KNOWN_CONCEPTS = (PARTNER, RISK, RESOURCE, OBJECTIVE, SERVICE, ACTIVITY)

#: Pseudo-attribute reported when two versions of an instance differ in relations.
RELATIONS_ATTR = "relations"


def _check_scalar(value: Any, where: str) -> None:
    if isinstance(value, bool) or isinstance(value, str):
        return
    if isinstance(value, int):
        return
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"{where}: non-finite number {value!r}")
        return
    raise TypeError(f"{where}: attribute values must be str, int, float or bool, got {type(value).__name__}")


def _typed(value: Scalar) -> tuple[int, Any]:
    # bool is an int subclass; keep True distinct from 1.
    if isinstance(value, bool):
        return (0, value)
    if isinstance(value, str):
        return (2, value)
    return (1, value)


def same_scalar(a: Scalar, b: Scalar) -> bool:
    return _typed(a) == _typed(b)


@dataclass(frozen=True, order=True)
class InstanceKey:
    concept: str
    id: str

    def __post_init__(self) -> None:
        if not isinstance(self.concept, str) or not self.concept:
            raise ValueError("instance concept must be a non-empty string")
        if not isinstance(self.id, str) or not self.id:
            raise ValueError("instance id must be a non-empty string")

    def __str__(self) -> str:
        return f"{self.concept}:{self.id}"


@dataclass(frozen=True, order=True)
class Relation:
    name: str
    target: InstanceKey

    def __post_init__(self) -> None:
        if not isinstance(self.name, str) or not self.name:
            raise ValueError("relation name must be a non-empty string")


@dataclass(frozen=True, eq=False)
class Instance:
    key: InstanceKey
    attributes: Mapping[str, Scalar] = field(default_factory=dict)
    relations: frozenset[Relation] = frozenset()

    def __post_init__(self) -> None:
        attrs = dict(self.attributes)
        for name, value in attrs.items():
            if not isinstance(name, str) or not name:
                raise ValueError(f"{self.key}: attribute names must be non-empty strings")
            _check_scalar(value, f"{self.key}.{name}")
        object.__setattr__(self, "attributes", MappingProxyType(attrs))
        object.__setattr__(self, "relations", frozenset(self.relations))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Instance):
            return NotImplemented
        return (
            self.key == other.key
            and self.relations == other.relations
            and changed_attribute_names(self.attributes, other.attributes) == set()
        )

    def __hash__(self) -> int:
        return hash(self.key)

    def with_attribute(self, name: str, value: Scalar) -> Instance:
        attrs = dict(self.attributes)
        attrs[name] = value
        return Instance(self.key, attrs, self.relations)

    def without_attribute(self, name: str) -> Instance:
        attrs = dict(self.attributes)
        attrs.pop(name, None)
        return Instance(self.key, attrs, self.relations)

    def with_relations(self, relations: Iterable[Relation]) -> Instance:
        return Instance(self.key, self.attributes, frozenset(relations))


def changed_attribute_names(a: Mapping[str, Scalar], b: Mapping[str, Scalar]) -> set[str]:
    names = set(a) | set(b)
    return {n for n in names if n not in a or n not in b or not same_scalar(a[n], b[n])}


class SituationModel:
    """An unordered set of instances, unique by ``(concept, id)``.

    Storage order is kept only so that tests can prove it never matters.
    """

    __slots__ = ("label", "_instances")

    def __init__(self, instances: Iterable[Instance] = (), label: str = "") -> None:
        self.label = label
        self._instances: dict[InstanceKey, Instance] = {}
        for inst in instances:
            if inst.key in self._instances:
                raise DuplicateInstance(f"duplicate instance {inst.key}")
            self._instances[inst.key] = inst

    @classmethod
    def _from_map(cls, instances: dict[InstanceKey, Instance], label: str) -> SituationModel:
        m = cls.__new__(cls)
        m.label = label
        m._instances = instances
        return m

    @property
    def instances(self) -> tuple[Instance, ...]:
        return tuple(self._instances.values())

    def keys(self) -> list[InstanceKey]:
        return sorted(self._instances)

    def get(self, key: InstanceKey) -> Instance | None:
        return self._instances.get(key)

    def __getitem__(self, key: InstanceKey) -> Instance:
        try:
            return self._instances[key]
        except KeyError:
            raise UnknownInstance(f"no instance {key}") from None

    def __contains__(self, key: object) -> bool:
        return key in self._instances

    def __len__(self) -> int:
        return len(self._instances)

    def __iter__(self) -> Iterator[Instance]:
        return iter(self._instances.values())

    def of_concept(self, concept: str) -> list[Instance]:
        return [self._instances[k] for k in sorted(self._instances) if k.concept == concept]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SituationModel):
            return NotImplemented
        return self.label == other.label and self._instances == other._instances

    def __repr__(self) -> str:
        return f"SituationModel(label={self.label!r}, n={len(self)})"


# --- effects ---------------------------------------------------------------

@dataclass(frozen=True)
class AddInstance:
    instance: Instance


@dataclass(frozen=True)
class RemoveInstance:
    key: InstanceKey


@dataclass(frozen=True)
class SetAttribute:
    key: InstanceKey
    name: str
    value: Scalar

    def __post_init__(self) -> None:
        if not isinstance(self.name, str) or not self.name:
            raise ValueError("attribute name must be a non-empty string")
        _check_scalar(self.value, f"{self.key}.{self.name}")


@dataclass(frozen=True)
class RemoveAttribute:
    key: InstanceKey
    name: str


@dataclass(frozen=True)
class AddRelation:
    key: InstanceKey
    name: str
    target: InstanceKey


@dataclass(frozen=True)
class RemoveRelation:
    key: InstanceKey
    name: str
    target: InstanceKey


ModelEffect = Union[AddInstance, RemoveInstance, SetAttribute, RemoveAttribute, AddRelation, RemoveRelation]


def apply_effect(model: SituationModel, effect: ModelEffect) -> SituationModel:
    """Return a new model with ``effect`` applied; ``model`` is left untouched."""
    instances = dict(model._instances)
    if isinstance(effect, AddInstance):
        key = effect.instance.key
        if key in instances:
            raise DuplicateInstance(f"instance {key} already exists")
        instances[key] = effect.instance
        return SituationModel._from_map(instances, model.label)

    key = effect.key
    if key not in instances:
        raise UnknownInstance(f"effect {type(effect).__name__} targets absent instance {key}")
    current = instances[key]
    if isinstance(effect, RemoveInstance):
        del instances[key]
    elif isinstance(effect, SetAttribute):
        instances[key] = current.with_attribute(effect.name, effect.value)
    elif isinstance(effect, RemoveAttribute):
        instances[key] = current.without_attribute(effect.name)
    elif isinstance(effect, AddRelation):
        instances[key] = current.with_relations(current.relations | {Relation(effect.name, effect.target)})
    elif isinstance(effect, RemoveRelation):
        instances[key] = current.with_relations(current.relations - {Relation(effect.name, effect.target)})
    else:
        raise TypeError(f"unknown effect {effect!r}")
    return SituationModel._from_map(instances, model.label)


def apply_effects(model: SituationModel, effects: Iterable[ModelEffect]) -> SituationModel:
    for e in effects:
        model = apply_effect(model, e)
    return model


def clone_model(model: SituationModel, new_label: str) -> SituationModel:
    # Instances are immutable, so sharing them is a deep copy in every observable way.
    return SituationModel._from_map(dict(model._instances), new_label)


# --- structural comparison ---------------------------------------------------

class Operation(enum.Enum):
    ADDED = "added"
    DELETED = "deleted"
    UPDATED = "updated"


@dataclass(frozen=True)
class Difference:
    key: InstanceKey
    operation: Operation
    changed_attributes: frozenset[str] = frozenset()
    attr_total: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "changed_attributes", frozenset(self.changed_attributes))
        if self.operation is Operation.UPDATED:
            if not self.changed_attributes:
                raise ValueError("an Updated difference needs at least one changed attribute")
            if self.attr_total < len(self.changed_attributes):
                raise ValueError("attr_total cannot be smaller than the number of changed attributes")
        elif self.changed_attributes or self.attr_total:
            raise ValueError("Added/Deleted differences carry no attribute detail")


def _compare_instances(old: Instance, new: Instance) -> Difference | None:
    changed = changed_attribute_names(old.attributes, new.attributes)
    total = len(set(old.attributes) | set(new.attributes))
    if old.relations or new.relations:
        # "relations" counts as one pseudo-attribute whenever either side has any.
        total += 1
        if old.relations != new.relations:
            changed.add(RELATIONS_ATTR)
    if not changed:
        return None
    return Difference(old.key, Operation.UPDATED, frozenset(changed), total)


def diff(expected: SituationModel, field: SituationModel) -> list[Difference]:
    """Key-matched comparison of two models, sorted by ``(concept, id)``.

    ``Added`` means present only in ``field``; ``Deleted`` only in ``expected``.
    """
    out: list[Difference] = []
    for key in sorted(set(expected._instances) | set(field._instances)):
        old = expected._instances.get(key)
        new = field._instances.get(key)
        if old is None:
            out.append(Difference(key, Operation.ADDED))
        elif new is None:
            out.append(Difference(key, Operation.DELETED))
        else:
            d = _compare_instances(old, new)
            if d is not None:
                out.append(d)
    return out


def validate(model: SituationModel) -> list[str]:
    """Warnings for relations whose target instance is absent."""
    warnings = []
    for key in sorted(model._instances):
        for rel in sorted(model._instances[key].relations):
            if rel.target not in model._instances:
                warnings.append(f"{key}: relation {rel.name!r} targets absent instance {rel.target}")
    return warnings


# --- JSON form ---------------------------------------------------------------

def key_to_dict(key: InstanceKey) -> dict[str, str]:
    return {"concept": key.concept, "id": key.id}


def instance_to_dict(inst: Instance) -> dict[str, Any]:
    return {
        "concept": inst.key.concept,
        "id": inst.key.id,
        "attributes": {k: inst.attributes[k] for k in sorted(inst.attributes)},
        "relations": [
            {"name": r.name, "concept": r.target.concept, "id": r.target.id}
            for r in sorted(inst.relations)
        ],
    }


def model_to_dict(model: SituationModel) -> dict[str, Any]:
    return {
        "label": model.label,
        "instances": [instance_to_dict(model._instances[k]) for k in sorted(model._instances)],
    }


def dumps_canonical(data: Any) -> str:
    return json.dumps(data, sort_keys=True, ensure_ascii=False, indent=2) + "\n"


def serialize(model: SituationModel) -> str:
    return dumps_canonical(model_to_dict(model))


def _reject_duplicate_keys(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for k, v in pairs:
        if k in out:
            raise ParseError(f"duplicate JSON key {k!r}")
        out[k] = v
    return out


def loads_json(text: str) -> Any:
    try:
        return json.loads(text, object_pairs_hook=_reject_duplicate_keys)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from None


def _require(data: Any, name: str, kind: type | tuple[type, ...], path: str) -> Any:
    if not isinstance(data, dict):
        raise ParseError("expected an object", path=path)
    if name not in data:
        raise ParseError(f"missing field {name!r}", path=path)
    value = data[name]
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise ParseError(f"field {name!r} has the wrong type", path=f"{path}.{name}")
    return value


def key_from_dict(data: Any, path: str = "$") -> InstanceKey:
    concept = _require(data, "concept", str, path)
    ident = _require(data, "id", str, path)
    try:
        return InstanceKey(concept, ident)
    except ValueError as exc:
        raise ParseError(str(exc), path=path) from None


def instance_from_dict(data: Any, path: str = "$") -> Instance:
    key = key_from_dict(data, path)
    attrs = data.get("attributes", {})
    if not isinstance(attrs, dict):
        raise ParseError("attributes must be an object", path=f"{path}.attributes")
    rels_raw = data.get("relations", [])
    if not isinstance(rels_raw, list):
        raise ParseError("relations must be an array", path=f"{path}.relations")
    rels = []
    for j, r in enumerate(rels_raw):
        rpath = f"{path}.relations[{j}]"
        name = _require(r, "name", str, rpath)
        try:
            rels.append(Relation(name, key_from_dict(r, rpath)))
        except ValueError as exc:
            raise ParseError(str(exc), path=rpath) from None
    try:
        return Instance(key, attrs, frozenset(rels))
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), path=path) from None


def model_from_dict(data: Any, path: str = "$") -> SituationModel:
    if not isinstance(data, dict):
        raise ParseError("expected a model object", path=path)
    label = data.get("label", "")
    if not isinstance(label, str):
        raise ParseError("label must be a string", path=f"{path}.label")
    raw = _require(data, "instances", list, path)
    seen: set[InstanceKey] = set()
    instances = []
    for i, item in enumerate(raw):
        inst = instance_from_dict(item, f"{path}.instances[{i}]")
        if inst.key in seen:
            raise ParseError(f"duplicate instance {inst.key}", path=f"{path}.instances[{i}]")
        seen.add(inst.key)
        instances.append(inst)
    return SituationModel(instances, label)


def parse(text: str) -> SituationModel:
    return model_from_dict(loads_json(text))


_EFFECT_OPS = {
    AddInstance: "add_instance",
    RemoveInstance: "remove_instance",
    SetAttribute: "set_attribute",
    RemoveAttribute: "remove_attribute",
    AddRelation: "add_relation",
    RemoveRelation: "remove_relation",
}


def effect_to_dict(effect: ModelEffect) -> dict[str, Any]:
    op = _EFFECT_OPS[type(effect)]
    if isinstance(effect, AddInstance):
        return {"op": op, "instance": instance_to_dict(effect.instance)}
    out: dict[str, Any] = {"op": op, **key_to_dict(effect.key)}
    if isinstance(effect, SetAttribute):
        out["name"] = effect.name
        out["value"] = effect.value
    elif isinstance(effect, RemoveAttribute):
        out["name"] = effect.name
    elif isinstance(effect, (AddRelation, RemoveRelation)):
        out["name"] = effect.name
        out["target"] = key_to_dict(effect.target)
    return out


def effect_from_dict(data: Any, path: str = "$") -> ModelEffect:
    op = _require(data, "op", str, path)
    try:
        if op == "add_instance":
            return AddInstance(instance_from_dict(_require(data, "instance", dict, path), f"{path}.instance"))
        key = key_from_dict(data, path)
        if op == "remove_instance":
            return RemoveInstance(key)
        name = _require(data, "name", str, path)
        if op == "set_attribute":
            if "value" not in data:
                raise ParseError("missing field 'value'", path=path)
            return SetAttribute(key, name, data["value"])
        if op == "remove_attribute":
            return RemoveAttribute(key, name)
        if op in ("add_relation", "remove_relation"):
            target = key_from_dict(_require(data, "target", dict, path), f"{path}.target")
            cls = AddRelation if op == "add_relation" else RemoveRelation
            return cls(key, name, target)
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), path=path) from None
    raise ParseError(f"unknown effect op {op!r}", path=f"{path}.op")


def effects_from_list(data: Any, path: str = "$") -> tuple[ModelEffect, ...]:
    if not isinstance(data, list):
        raise ParseError("effects must be an array", path=path)
    return tuple(effect_from_dict(e, f"{path}[{i}]") for i, e in enumerate(data))
