"""Exception hierarchy shared by every layer of the engine."""

from __future__ import annotations


class AgilityError(Exception):
    """Base class for all errors raised by this package."""


class UnknownInstance(AgilityError):
    """An effect targets an instance key that is not in the model."""


class DuplicateInstance(AgilityError):
    """An instance is added under a key that already exists."""


class ParseError(AgilityError):
    """Malformed model/event/rule text.

    ``line`` and ``column`` are 1-based when the failure has a textual
    position; ``path`` locates schema-level problems inside the document.
    """

    def __init__(self, message: str, line: int | None = None,
                 column: int | None = None, path: str | None = None) -> None:
        self.message = message
        self.line = line
        self.column = column
        self.path = path
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        if path:
            where.append(path)
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class DuplicateSubscription(AgilityError):
    pass


class OutOfOrderFeed(AgilityError):
    """CEP input timestamp went backwards."""


class DuplicateRuleId(AgilityError):
    pass


class InvalidProcess(AgilityError):
    """Process definition is cyclic, has unreachable activities, or names unknown services."""


class IllegalTransition(AgilityError):
    pass


class OutOfOrderEvent(AgilityError):
    """The agility service received an event older than one already processed."""


class NoCapableService(AgilityError):
    """No available registry service offers the capability an objective requires."""

    def __init__(self, objective: object, capability: str | None) -> None:
        self.objective = objective
        self.capability = capability
        super().__init__(f"no available service with capability {capability!r} for {objective}")


class ScenarioValidationError(AgilityError):
    def __init__(self, problems: list[str]) -> None:
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
