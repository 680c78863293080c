"""Exception hierarchy.

The three top-level families map onto CLI exit codes: validation (2),
endpoint (3) and estimation (4).
"""

from __future__ import annotations

from typing import Sequence


class PairscaleError(Exception):
    exit_code = 1


class ValidationError(PairscaleError):
    exit_code = 2


class EndpointError(PairscaleError):
    exit_code = 3


class EstimationError(PairscaleError):
    exit_code = 4


class EmptyRoster(ValidationError):
    pass


class DuplicateId(ValidationError):
    pass


class NonPositiveCovariate(ValidationError):
    pass


class InvalidCovariate(ValidationError):
    pass


class TooFewEntities(ValidationError):
    pass


class UnknownEntity(ValidationError):
    pass


class MissingCovariate(ValidationError):
    def __init__(self, entity_id: str, field: str):
        super().__init__(f"entity {entity_id!r} is missing required covariate {field!r}")
        self.entity_id = entity_id
        self.field = field


class LengthMismatch(ValidationError):
    pass


class ConstantVector(ValidationError):
    pass


class DegenerateOutcome(ValidationError):
    pass


class EndpointUnreachable(EndpointError):
    pass


class AuthFailure(EndpointError):
    pass


class DisconnectedGraph(EstimationError):
    def __init__(self, components: Sequence[Sequence[str]]):
        self.components = [list(c) for c in components]
        parts = "; ".join("{" + ", ".join(c) + "}" for c in self.components)
        super().__init__(
            f"comparison graph has {len(self.components)} connected components: {parts}"
        )


class Separation(EstimationError):
    """The maximum-likelihood estimate does not exist (it lies at infinity)."""

    def __init__(self, names: Sequence[str], detail: str = ""):
        self.names = list(names)
        msg = "separation involving: " + ", ".join(self.names)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NotConverged(EstimationError):
    pass


class SingularInformation(EstimationError):
    pass
