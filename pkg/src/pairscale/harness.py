"""Elicitation harness: schedule all pairs, query a chat endpoint, parse, tally."""

from __future__ import annotations

import ipaddress
import json
import logging
import os
import random
import time
import unicodedata
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from datetime import datetime, timezone
from itertools import combinations
from typing import Any, Callable, Iterable, Sequence

import httpx
import numpy as np

from .cache import ComparisonCache
from .core import ComparisonRecord, Entity, Outcome, PairTask, WinTally
from .errors import (
    AuthFailure,
    EndpointError,
    EndpointUnreachable,
    TooFewEntities,
    UnknownEntity,
    ValidationError,
)
from .prompts import PromptTemplate

log = logging.getLogger(__name__)

API_KEY_ENV = "PAIRSCALE_API_KEY"
TASK_HEADER = "X-Pairscale-Task"
RETRYABLE_STATUS = {408, 409, 429, 500, 502, 503, 504}


def schedule_pairs(
    entities: Sequence[Entity], repeats: int, attribute: str, seed: int
) -> list[PairTask]:
    """All unordered pairs times ``repeats``; presentation order and task order are seeded."""
    if len(entities) < 2:
        raise TooFewEntities("need at least two entities to schedule comparisons")
    if repeats < 1:
        raise ValidationError("repeats must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    ids = [e.id for e in entities]
    tasks = []
    for a, b in combinations(ids, 2):
        flips = rng.random(repeats) < 0.5
        for r in range(repeats):
            left, right = (b, a) if flips[r] else (a, b)
            tasks.append(PairTask(left, right, attribute, r))
    order = rng.permutation(len(tasks))
    return [tasks[i] for i in order]


_QUOTES = "\"'`“”‘’«»"


def _clean(text: str) -> str:
    text = unicodedata.normalize("NFC", text).strip()
    prev = None
    while text != prev:
        prev = text
        text = text.rstrip(".").strip().strip(_QUOTES).strip()
    return text


def parse_extraction(reply: str, left_name: str, right_name: str) -> Outcome | None:
    """Map an extraction reply onto WIN_LEFT, WIN_RIGHT or TIE.

    Returns None for a parse failure: neither name nor "tie" matches exactly,
    and not exactly one of the two names occurs inside the reply.
    """
    text = _clean(reply).casefold()
    left = _clean(left_name).casefold()
    right = _clean(right_name).casefold()
    if text == left:
        return Outcome.WIN_LEFT
    if text == right:
        return Outcome.WIN_RIGHT
    if text == "tie":
        return Outcome.TIE
    has_left = bool(left) and left in text
    has_right = bool(right) and right in text
    if has_left and not has_right:
        return Outcome.WIN_LEFT
    if has_right and not has_left:
        return Outcome.WIN_RIGHT
    return None


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_id: str
    api_key: str | None = field(default=None, repr=False)
    stage1_sampling: dict[str, Any] = field(default_factory=dict)  # empty: server defaults
    stage2_temperature: float = 0.0
    max_retries: int = 3
    request_timeout: float = 120.0
    max_concurrency: int = 8
    transport_retries: int = 5
    backoff_base: float = 1.0
    backoff_cap: float = 60.0

    def __post_init__(self) -> None:
        if self.stage2_temperature != 0:
            raise ValidationError("extraction stage must run at temperature 0")
        if self.max_concurrency < 1:
            raise ValidationError("max_concurrency must be >= 1")
        if self.max_retries < 0 or self.transport_retries < 0:
            raise ValidationError("retry counts must be >= 0")

    @classmethod
    def from_env(cls, base_url: str, model_id: str, **kwargs: Any) -> EndpointConfig:
        return cls(base_url, model_id, api_key=os.environ.get(API_KEY_ENV), **kwargs)


def _is_loopback(url: str) -> bool:
    host = httpx.URL(url).host
    if host == "localhost":
        return True
    try:
        return ipaddress.ip_address(host).is_loopback
    except ValueError:
        return False


class ChatClient:
    """Minimal OpenAI-compatible ``chat/completions`` client with backoff."""

    def __init__(self, config: EndpointConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        headers = {"Content-Type": "application/json"}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        self._http = httpx.Client(
            base_url=config.base_url.rstrip("/") + "/",
            headers=headers,
            timeout=config.request_timeout,
            transport=transport,
            # never route loopback traffic (e.g. the mock endpoint) via a proxy
            trust_env=not _is_loopback(config.base_url),
        )

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> ChatClient:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    def _sleep(self, attempt: int, retry_after: str | None = None) -> None:
        delay = self.config.backoff_base * (2**attempt)
        if retry_after:
            try:
                delay = max(delay, float(retry_after))
            except ValueError:
                pass
        delay = min(delay, self.config.backoff_cap)
        if delay > 0:
            time.sleep(delay * (0.5 + random.random() / 2))

    def complete(
        self,
        messages: list[dict[str, str]],
        params: dict[str, Any] | None = None,
        tag: dict[str, Any] | None = None,
    ) -> str:
        body = {"model": self.config.model_id, "messages": messages, **(params or {})}
        headers = {TASK_HEADER: json.dumps(tag, ensure_ascii=True)} if tag else None
        last: str = ""
        for attempt in range(self.config.transport_retries + 1):
            try:
                resp = self._http.post("chat/completions", json=body, headers=headers)
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
            else:
                if resp.status_code in (401, 403):
                    raise AuthFailure(f"endpoint rejected credentials ({resp.status_code})")
                if resp.status_code in RETRYABLE_STATUS:
                    last = f"HTTP {resp.status_code}"
                    if attempt < self.config.transport_retries:
                        self._sleep(attempt, resp.headers.get("Retry-After"))
                    continue
                if resp.is_error:
                    raise EndpointError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                try:
                    return resp.json()["choices"][0]["message"]["content"] or ""
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    raise EndpointError(f"malformed chat completion response: {exc}") from None
            if attempt < self.config.transport_retries:
                self._sleep(attempt)
        raise EndpointUnreachable(
            f"{self.config.base_url} unreachable after "
            f"{self.config.transport_retries + 1} attempts ({last})"
        )


def run_comparison(
    task: PairTask,
    template: PromptTemplate,
    endpoint: EndpointConfig,
    client: ChatClient | None = None,
    display: Callable[[str], str] | None = None,
) -> ComparisonRecord:
    """Run the two-stage exchange for one task, retrying whole conversations on
    parse failure; after ``max_retries`` retries the record is UNUSABLE.

    ``display`` maps entity ids to the names shown in prompts (default: the id).
    """
    if template.attribute != task.attribute:
        raise ValidationError(
            f"template {template.attribute!r} does not match task attribute {task.attribute!r}"
        )
    own_client = client is None
    client = client or ChatClient(endpoint)
    name = display or (lambda x: x)
    left_name, right_name = name(task.left), name(task.right)
    stage1, stage2 = template.render(left_name, right_name)
    outcome = Outcome.UNUSABLE
    reply1 = reply2 = ""
    try:
        for attempt in range(endpoint.max_retries + 1):
            tag = {**task.to_dict(), "attempt": attempt}
            messages = [{"role": "user", "content": stage1}]
            reply1 = client.complete(messages, endpoint.stage1_sampling, {**tag, "stage": 1})
            messages += [
                {"role": "assistant", "content": reply1},
                {"role": "user", "content": stage2},
            ]
            reply2 = client.complete(
                messages, {"temperature": endpoint.stage2_temperature}, {**tag, "stage": 2}
            )
            parsed = parse_extraction(reply2, left_name, right_name)
            if parsed is not None:
                outcome = parsed
                break
            log.debug("unparseable extraction for %s (attempt %d): %r", task, attempt, reply2)
    finally:
        if own_client:
            client.close()
    return ComparisonRecord(
        task, outcome, reply1, reply2, endpoint.model_id, datetime.now(timezone.utc)
    )


@dataclass
class RunSummary:
    scheduled: int = 0
    skipped: int = 0
    issued: int = 0
    usable: int = 0
    unusable: int = 0

    @property
    def unusable_rate(self) -> float:
        done = self.usable + self.unusable
        return self.unusable / done if done else 0.0


def pending_tasks(
    tasks: Iterable[PairTask], cache: ComparisonCache, model_id: str
) -> list[PairTask]:
    return [
        t for t in tasks
        if not cache.has_usable((t.attribute, model_id, t.pair, t.repeat_index))
    ]


def run_schedule(
    tasks: Sequence[PairTask],
    template: PromptTemplate,
    endpoint: EndpointConfig,
    cache: ComparisonCache,
    client: ChatClient | None = None,
    display: Callable[[str], str] | None = None,
    progress: Callable[[RunSummary], None] | None = None,
) -> RunSummary:
    """Run every task lacking a usable cached record, up to ``max_concurrency`` at once.

    Records are appended to ``cache`` as they complete, so an interrupted run
    can be resumed by calling this again with the same tasks.
    """
    todo = pending_tasks(tasks, cache, endpoint.model_id)
    summary = RunSummary(scheduled=len(tasks), skipped=len(tasks) - len(todo))
    if not todo:
        return summary
    own_client = client is None
    client = client or ChatClient(endpoint)

    def one(task: PairTask) -> ComparisonRecord:
        rec = run_comparison(task, template, endpoint, client, display)
        cache.append(rec)
        return rec

    try:
        with ThreadPoolExecutor(max_workers=endpoint.max_concurrency) as pool:
            futures = {pool.submit(one, t) for t in todo}
            while futures:
                done, futures = wait(futures, return_when=FIRST_EXCEPTION)
                for fut in done:
                    exc = fut.exception()
                    if exc is not None:
                        for f in futures:
                            f.cancel()
                        raise exc
                    summary.issued += 1
                    if fut.result().outcome.usable:
                        summary.usable += 1
                    else:
                        summary.unusable += 1
                if progress:
                    progress(summary)
    finally:
        if own_client:
            client.close()
    return summary


def tally(records: Iterable[ComparisonRecord], entities: Sequence[Entity | str]) -> WinTally:
    """Aggregate records into a win matrix: a win adds 1, a tie adds 0.5 to each side."""
    ids = tuple(e if isinstance(e, str) else e.id for e in entities)
    index = {eid: k for k, eid in enumerate(ids)}
    wins = np.zeros((len(ids), len(ids)))
    usable = unusable = 0
    for rec in records:
        for eid in (rec.task.left, rec.task.right):
            if eid not in index:
                raise UnknownEntity(f"record references unknown entity {eid!r}")
        if not rec.outcome.usable:
            unusable += 1
            continue
        usable += 1
        i, j = index[rec.task.left], index[rec.task.right]
        if rec.outcome is Outcome.WIN_LEFT:
            wins[i, j] += 1.0
        elif rec.outcome is Outcome.WIN_RIGHT:
            wins[j, i] += 1.0
        else:
            wins[i, j] += 0.5
            wins[j, i] += 0.5
    return WinTally(ids, wins, usable, unusable)
