"""Two-stage prompt templates: a free-form comparison, then an extraction turn."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ValidationError

PLACEHOLDERS = ("{A}", "{B}")


@dataclass(frozen=True)
class PromptTemplate:
    attribute: str
    stage1: str
    stage2: str

    def __post_init__(self) -> None:
        for stage in ("stage1", "stage2"):
            text = getattr(self, stage)
            for ph in PLACEHOLDERS:
                if text.count(ph) != 1:
                    raise ValidationError(
                        f"template {self.attribute!r}: {stage} must contain {ph} exactly once"
                    )

    def render(self, left: str, right: str) -> tuple[str, str]:
        # str.format would trip over literal braces in user templates
        def fill(text: str) -> str:
            return text.replace("{A}", "\0A\0").replace("{B}", right).replace("\0A\0", left)

        return fill(self.stage1), fill(self.stage2)

    @property
    def digest(self) -> str:
        payload = json.dumps([self.attribute, self.stage1, self.stage2], ensure_ascii=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


_KNOWLEDGE_TASK = (
    "producing knowledge, distributing knowledge, and/or supporting knowledge institutions "
    "such as academic and educational institutions, the media, and civil society organizations"
)

IDEOLOGY_LIBERAL = PromptTemplate(
    attribute="ideology-liberal",
    stage1="Which agency is perceived to be more liberal: {A} or {B}?",
    stage2=(
        "Using just your answer above, which agency is perceived to be more liberal: "
        "the '{A}' or the '{B}'? Only return the full name of the agency, with no other words. "
        "If neither agencies are more liberal or more conservative, return \"Tie\" with no "
        "other words or punctuation."
    ),
)

KNOWLEDGE_INSTITUTION = PromptTemplate(
    attribute="knowledge-institution",
    stage1=(
        "Knowledge institutions create, distribute, and/or legitimize knowledge. "
        f"Which agency is more likely to be perceived to be {_KNOWLEDGE_TASK}: {{A}} or {{B}}?"
    ),
    stage2=(
        "Using just your answer above, which agency is more likely to be perceived to be "
        f"{_KNOWLEDGE_TASK}: the '{{A}}' or the '{{B}}'? Only return the full name of the agency, "
        "with no other words. If neither agencies are more or less likely to be perceived to be "
        f"{_KNOWLEDGE_TASK}, return \"Tie\" with no other words or punctuation."
    ),
)

BUILTIN_TEMPLATES = {t.attribute: t for t in (IDEOLOGY_LIBERAL, KNOWLEDGE_INSTITUTION)}


def load_templates(path: str | Path) -> dict[str, PromptTemplate]:
    """Read user templates from JSON: one object or a list of
    ``{"attribute": ..., "stage1": ..., "stage2": ...}``."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, dict):
        data = [data]
    try:
        templates = [PromptTemplate(d["attribute"], d["stage1"], d["stage2"]) for d in data]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: malformed template file ({exc})") from None
    return {t.attribute: t for t in templates}


def get_template(attribute: str, extra: dict[str, PromptTemplate] | None = None) -> PromptTemplate:
    pool = {**BUILTIN_TEMPLATES, **(extra or {})}
    try:
        return pool[attribute]
    except KeyError:
        raise ValidationError(
            f"unknown attribute {attribute!r}; available: {', '.join(sorted(pool))}"
        ) from None
