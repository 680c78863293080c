"""Domain types shared across the toolkit, plus roster ingestion."""

from __future__ import annotations

import csv
import enum
import math
import unicodedata
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DuplicateId,
    EmptyRoster,
    InvalidCovariate,
    NonPositiveCovariate,
    ValidationError,
)

ROSTER_COLUMNS = ("id", "annual_budget", "total_staff", "layoff", "external_score")


def normalize_name(name: str) -> str:
    """Canonical form of an entity name: NFC-normalized and trimmed."""
    return unicodedata.normalize("NFC", name).strip()


def _frozen_array(values: Any, dtype: Any = float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Covariates:
    annual_budget: float | None = None
    total_staff: float | None = None
    layoff: int | None = None
    external_score: float | None = None

    def __post_init__(self) -> None:
        for name in ("annual_budget", "total_staff", "external_score"):
            value = getattr(self, name)
            if value is not None and not math.isfinite(value):
                raise InvalidCovariate(f"{name} must be finite, got {value!r}")
        if self.layoff is not None and self.layoff not in (0, 1):
            raise InvalidCovariate(f"layoff must be 0 or 1, got {self.layoff!r}")

    def get(self, name: str) -> float | int | None:
        return getattr(self, name)


@dataclass(frozen=True)
class Entity:
    id: str
    display_name: str = ""
    covariates: Covariates = field(default_factory=Covariates)

    def __post_init__(self) -> None:
        if not isinstance(self.id, str) or not normalize_name(self.id):
            raise ValidationError("entity id must be a non-empty string")
        object.__setattr__(self, "id", normalize_name(self.id))
        if not self.display_name:
            object.__setattr__(self, "display_name", self.id)


@dataclass(frozen=True)
class PairTask:
    left: str
    right: str
    attribute: str
    repeat_index: int = 0

    def __post_init__(self) -> None:
        if self.left == self.right:
            raise ValidationError(f"pair task compares {self.left!r} with itself")
        if self.repeat_index < 0:
            raise ValidationError("repeat_index must be >= 0")

    @property
    def pair(self) -> tuple[str, str]:
        """The unordered pair, as a sorted tuple."""
        return (self.left, self.right) if self.left < self.right else (self.right, self.left)

    def to_dict(self) -> dict[str, Any]:
        return {
            "left": self.left,
            "right": self.right,
            "attribute": self.attribute,
            "repeat_index": self.repeat_index,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> PairTask:
        return cls(d["left"], d["right"], d["attribute"], int(d["repeat_index"]))


class Outcome(str, enum.Enum):
    WIN_LEFT = "win_left"
    WIN_RIGHT = "win_right"
    TIE = "tie"
    UNUSABLE = "unusable"

    @property
    def usable(self) -> bool:
        return self is not Outcome.UNUSABLE


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).isoformat(timespec="microseconds").replace("+00:00", "Z")


def parse_timestamp(text: str) -> datetime:
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    return datetime.fromisoformat(text).astimezone(timezone.utc)


@dataclass(frozen=True)
class ComparisonRecord:
    task: PairTask
    outcome: Outcome
    stage1_transcript: str
    stage2_transcript: str
    model_id: str
    timestamp: datetime

    @property
    def winner(self) -> str | None:
        if self.outcome is Outcome.WIN_LEFT:
            return self.task.left
        if self.outcome is Outcome.WIN_RIGHT:
            return self.task.right
        return None

    @property
    def cache_key(self) -> tuple[str, str, tuple[str, str], int]:
        return (self.task.attribute, self.model_id, self.task.pair, self.task.repeat_index)

    def to_dict(self) -> dict[str, Any]:
        return {
            "task": self.task.to_dict(),
            "outcome": self.outcome.value,
            "stage1_transcript": self.stage1_transcript,
            "stage2_transcript": self.stage2_transcript,
            "model_id": self.model_id,
            "timestamp": format_timestamp(self.timestamp),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ComparisonRecord:
        return cls(
            task=PairTask.from_dict(d["task"]),
            outcome=Outcome(d["outcome"]),
            stage1_transcript=d["stage1_transcript"],
            stage2_transcript=d["stage2_transcript"],
            model_id=d["model_id"],
            timestamp=parse_timestamp(d["timestamp"]),
        )


@dataclass(frozen=True, eq=False)
class WinTally:
    """Real-valued win counts; ``wins[i, j]`` is the number of wins of i over j."""

    entities: tuple[str, ...]
    wins: np.ndarray
    n_usable: int = 0
    n_unusable: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "entities", tuple(self.entities))
        wins = _frozen_array(self.wins)
        n = len(self.entities)
        if wins.shape != (n, n):
            raise ValidationError(f"win matrix shape {wins.shape} does not match {n} entities")
        if len(set(self.entities)) != n:
            raise DuplicateId("duplicate entity ids in tally")
        if not np.all(np.isfinite(wins)) or np.any(wins < 0):
            raise ValidationError("win counts must be finite and non-negative")
        if np.any(np.diag(wins) != 0):
            raise ValidationError("win matrix diagonal must be zero")
        object.__setattr__(self, "wins", wins)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WinTally):
            return NotImplemented
        return (
            self.entities == other.entities
            and np.array_equal(self.wins, other.wins)
            and self.n_usable == other.n_usable
            and self.n_unusable == other.n_unusable
        )

    @property
    def n(self) -> int:
        return len(self.entities)

    @property
    def comparisons(self) -> np.ndarray:
        """Symmetric matrix of comparison counts per unordered pair."""
        return self.wins + self.wins.T

    def index(self, entity_id: str) -> int:
        return self.entities.index(entity_id)

    def permuted(self, order: Sequence[int]) -> WinTally:
        order = list(order)
        return WinTally(
            tuple(self.entities[i] for i in order),
            self.wins[np.ix_(order, order)],
            self.n_usable,
            self.n_unusable,
        )

    def subset(self, ids: Sequence[str]) -> WinTally:
        return self.permuted([self.index(i) for i in ids])


@dataclass(frozen=True, eq=False)
class ScaledScores:
    entities: tuple[str, ...]
    lam: np.ndarray
    quasi_se: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    converged: bool
    iterations: int
    log_likelihood: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "entities", tuple(self.entities))
        n = len(self.entities)
        for name in ("lam", "quasi_se", "ci_low", "ci_high"):
            arr = _frozen_array(getattr(self, name))
            if arr.shape != (n,):
                raise ValidationError(f"{name} has shape {arr.shape}, expected ({n},)")
            object.__setattr__(self, name, arr)
        scale = max(1.0, float(np.max(np.abs(self.lam)))) if n else 1.0
        if n and abs(float(self.lam.mean())) > 1e-10 * scale:
            raise ValidationError("lambda must be mean-zero")

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.entities, self.lam.tolist()))

    def flipped(self) -> ScaledScores:
        """Scores on the reversed axis: lambda negated, interval bounds swapped."""
        return ScaledScores(
            self.entities,
            -self.lam,
            self.quasi_se,
            -self.ci_high,
            -self.ci_low,
            self.converged,
            self.iterations,
            self.log_likelihood,
        )


@dataclass(frozen=True, eq=False)
class RegressionResult:
    predictor_names: tuple[str, ...]
    beta: np.ndarray
    se: np.ndarray
    z: np.ndarray
    p: np.ndarray
    n_obs: int
    converged: bool
    log_likelihood: float = float("nan")
    iterations: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "predictor_names", tuple(self.predictor_names))
        for name in ("beta", "se", "z", "p"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))

    def coef(self, name: str) -> tuple[float, float, float, float]:
        k = self.predictor_names.index(name)
        return float(self.beta[k]), float(self.se[k]), float(self.z[k]), float(self.p[k])


# -- roster ------------------------------------------------------------------


def _parse_number(value: Any, column: str, entity_id: str) -> float | None:
    if value is None:
        return None
    if isinstance(value, str):
        value = value.strip()
        if value == "" or value.upper() in ("NA", "NAN", "NULL"):
            return None
    try:
        return float(value)
    except (TypeError, ValueError):
        raise InvalidCovariate(f"{entity_id!r}: {column} is not numeric: {value!r}") from None


def _entity_from_row(row: Mapping[str, Any] | Entity) -> Entity:
    if isinstance(row, Entity):
        row = {"id": row.id, "display_name": row.display_name,
               **{f.name: getattr(row.covariates, f.name) for f in fields(Covariates)}}
    raw_id = row.get("id")
    if raw_id is None or not normalize_name(str(raw_id)):
        raise ValidationError("roster row has an empty id")
    eid = normalize_name(str(raw_id))
    values = {c: _parse_number(row.get(c), c, eid) for c in ROSTER_COLUMNS[1:]}
    for c in ("annual_budget", "total_staff"):
        if values[c] is not None and values[c] <= 0:
            raise NonPositiveCovariate(f"{eid!r}: {c} must be > 0, got {values[c]!r}")
    layoff = values["layoff"]
    if layoff is not None:
        if layoff not in (0.0, 1.0):
            raise InvalidCovariate(f"{eid!r}: layoff must be 0 or 1, got {layoff!r}")
        layoff = int(layoff)
    display = row.get("display_name") or eid
    return Entity(
        eid,
        normalize_name(str(display)),
        Covariates(values["annual_budget"], values["total_staff"], layoff, values["external_score"]),
    )


def validate_roster(rows: Iterable[Mapping[str, Any] | Entity]) -> list[Entity]:
    """Validate raw roster rows (or entities) into a list of :class:`Entity`.

    Raises EmptyRoster, DuplicateId or NonPositiveCovariate.
    """
    entities = [_entity_from_row(r) for r in rows]
    if not entities:
        raise EmptyRoster("roster contains no entities")
    seen: set[str] = set()
    for e in entities:
        if e.id in seen:
            raise DuplicateId(f"duplicate entity id {e.id!r}")
        seen.add(e.id)
    return entities


def read_roster(path: str | Path) -> list[Entity]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "id" not in [f.strip() for f in reader.fieldnames]:
            raise ValidationError(f"{path}: roster needs a header row with an 'id' column")
        rows = [{(k or "").strip(): v for k, v in row.items()} for row in reader]
    return validate_roster(rows)


def write_roster(entities: Sequence[Entity], path: str | Path) -> None:
    def cell(v: Any) -> str:
        return "" if v is None else repr(v) if isinstance(v, float) else str(v)

    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ROSTER_COLUMNS)
        for e in entities:
            c = e.covariates
            writer.writerow([e.id] + [cell(c.get(k)) for k in ROSTER_COLUMNS[1:]])
