"""Synthetic comparison data from known abilities, and a mock chat endpoint.

Every (pair, repeat) cell owns an independent PCG64 stream seeded with
``SeedSequence([seed, i, j, repeat])`` (``i < j`` are roster positions), so
draws do not depend on generation or request order.  Each cell draws three
uniforms: tie, win and fault.
"""

from __future__ import annotations

import json
import logging
import math
import re
import socket
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from itertools import combinations
from typing import Any, Sequence

import numpy as np

from .core import ComparisonRecord, Covariates, Entity, Outcome, PairTask
from .errors import ValidationError
from .harness import TASK_HEADER

log = logging.getLogger(__name__)

PRNG_NAME = "numpy.PCG64/SeedSequence([seed, i, j, repeat])"
SYNTH_MARKER = "[synthetic]"
SYNTH_MODEL_ID = "synthetic"
SYNTH_TIMESTAMP = datetime(1970, 1, 1, tzinfo=timezone.utc)
MOCK_STAGE1_REPLY = "[mock] I have compared the two agencies and settled on an answer."
MOCK_GARBAGE_REPLY = "Both agencies are nonpartisan."


def default_ids(n: int) -> tuple[str, ...]:
    width = len(str(n))
    return tuple(f"E{k + 1:0{width}d}" for k in range(n))


@dataclass(frozen=True)
class SynthSpec:
    true_lambda: tuple[float, ...]
    repeats: int = 1
    tie_rate: float = 0.0
    seed: int = 0
    attribute: str = "synthetic"
    ids: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "true_lambda", tuple(float(x) for x in self.true_lambda))
        if len(self.true_lambda) < 2:
            raise ValidationError("true_lambda needs at least two entries")
        if self.repeats < 1:
            raise ValidationError("repeats must be >= 1")
        if not 0 <= self.tie_rate <= 1:
            raise ValidationError("tie_rate must lie in [0, 1]")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer")
        if self.ids is None:
            object.__setattr__(self, "ids", default_ids(len(self.true_lambda)))
        elif len(self.ids) != len(self.true_lambda):
            raise ValidationError("ids and true_lambda lengths differ")


def cell_uniforms(seed: int, i: int, j: int, repeat: int, attempt: int | None = None) -> np.ndarray:
    key = [seed, i, j, repeat] if attempt is None else [seed, i, j, repeat, attempt + 1]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key))).random(3)


def win_probability(lam_i: float, lam_j: float) -> float:
    return 1.0 / (1.0 + math.exp(-(lam_i - lam_j)))


def draw_outcome(u_tie: float, u_win: float, lam_i: float, lam_j: float, tie_rate: float) -> Outcome:
    """Outcome for the ordered pair (i, j): WIN_LEFT means i won."""
    if u_tie < tie_rate:
        return Outcome.TIE
    return Outcome.WIN_LEFT if u_win < win_probability(lam_i, lam_j) else Outcome.WIN_RIGHT


def generate(spec: SynthSpec) -> list[ComparisonRecord]:
    """Records for every unordered pair and repeat, sampled from the BT model."""
    lam = spec.true_lambda
    ids = spec.ids
    records = []
    for i, j in combinations(range(len(lam)), 2):
        for r in range(spec.repeats):
            u_tie, u_win, _ = cell_uniforms(spec.seed, i, j, r)
            outcome = draw_outcome(u_tie, u_win, lam[i], lam[j], spec.tie_rate)
            winner = {Outcome.WIN_LEFT: ids[i], Outcome.WIN_RIGHT: ids[j]}.get(outcome, "Tie")
            records.append(
                ComparisonRecord(
                    PairTask(ids[i], ids[j], spec.attribute, r),
                    outcome,
                    SYNTH_MARKER,
                    f"{SYNTH_MARKER} {winner}",
                    SYNTH_MODEL_ID,
                    SYNTH_TIMESTAMP,
                )
            )
    return records


class MockEndpoint:
    """In-process OpenAI-compatible ``chat/completions`` server on loopback.

    Stage-1 requests (a single user message) get a fixed sentence.  Stage-2
    requests get the sampled winner's display name or "Tie"; with probability
    ``garbage_rate`` an unparseable reply instead.  Faults are drawn per
    (pair, repeat) when ``fault_per_attempt`` is false, so a faulty cell
    stays faulty across retries.

    The cell is identified from the ``X-Pairscale-Task`` header.  Clients
    that do not send it get the pair located by name in the first message and
    a per-pair request counter standing in for the repeat index.
    """

    def __init__(
        self,
        true_lambda: Sequence[float],
        entities: Sequence[Entity],
        seed: int = 0,
        tie_rate: float = 0.0,
        garbage_rate: float = 0.0,
        fault_per_attempt: bool = False,
        host: str = "127.0.0.1",
    ):
        if len(true_lambda) != len(entities):
            raise ValidationError("true_lambda and entities lengths differ")
        self.lam = [float(x) for x in true_lambda]
        self.entities = list(entities)
        self.index = {e.id: k for k, e in enumerate(self.entities)}
        self.seed = seed
        self.tie_rate = tie_rate
        self.garbage_rate = garbage_rate
        self.fault_per_attempt = fault_per_attempt
        self.request_count = 0
        self.stage2_temperatures: set[Any] = set()
        self._lock = threading.Lock()
        self._pair_counters: dict[tuple[int, int], int] = {}
        self._server = ThreadingHTTPServer((host, 0), self._handler_class())
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/v1"

    def start(self) -> MockEndpoint:
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._thread:
            # shutdown() blocks unless serve_forever is running
            self._server.shutdown()
            self._thread.join()
            self._thread = None
        self._server.server_close()

    def __enter__(self) -> MockEndpoint:
        return self.start()

    def __exit__(self, *exc: object) -> None:
        self.stop()

    # -- protocol --------------------------------------------------------

    def _locate(self, text: str) -> tuple[int, int] | None:
        found = [k for k, e in enumerate(self.entities) if e.display_name in text]
        # drop names that only matched as part of a longer matched name
        names = {k: self.entities[k].display_name for k in found}
        found = [k for k in found if not any(
            names[k] != names[m] and names[k] in names[m] for m in found)]
        if len(found) != 2:
            return None
        pos = sorted(found, key=lambda k: text.index(names[k]))
        return pos[0], pos[1]

    def reply(self, body: dict[str, Any], tag: dict[str, Any] | None) -> str:
        messages = body.get("messages") or []
        with self._lock:
            self.request_count += 1
        if len(messages) < 3:
            return MOCK_STAGE1_REPLY
        with self._lock:
            self.stage2_temperatures.add(body.get("temperature"))

        attempt = None
        if tag and tag.get("left") in self.index and tag.get("right") in self.index:
            left, right = self.index[tag["left"]], self.index[tag["right"]]
            repeat = int(tag.get("repeat_index", 0))
            attempt = int(tag.get("attempt", 0))
        else:
            located = self._locate(str(messages[0].get("content", "")))
            if located is None:
                return MOCK_GARBAGE_REPLY
            left, right = located
            key = (min(located), max(located))
            with self._lock:
                repeat = self._pair_counters.get(key, 0)
                self._pair_counters[key] = repeat + 1

        i, j = min(left, right), max(left, right)
        u_tie, u_win, u_fault = cell_uniforms(self.seed, i, j, repeat)
        if self.fault_per_attempt and attempt is not None:
            u_fault = cell_uniforms(self.seed, i, j, repeat, attempt)[2]
        if u_fault < self.garbage_rate:
            return MOCK_GARBAGE_REPLY
        outcome = draw_outcome(u_tie, u_win, self.lam[i], self.lam[j], self.tie_rate)
        if outcome is Outcome.TIE:
            return "Tie"
        winner = i if outcome is Outcome.WIN_LEFT else j
        return self.entities[winner].display_name

    def _handler_class(self) -> type[BaseHTTPRequestHandler]:
        mock = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def setup(self) -> None:
                super().setup()
                # headers and body go out in separate writes
                self.connection.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

            def log_message(self, fmt: str, *args: Any) -> None:
                log.debug("mock endpoint: " + fmt, *args)

            def _send(self, status: int, payload: dict[str, Any]) -> None:
                data = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def do_POST(self) -> None:
                length = int(self.headers.get("Content-Length") or 0)
                raw = self.rfile.read(length)
                if not re.search(r"/chat/completions/?$", self.path):
                    self._send(404, {"error": {"message": f"no route {self.path}"}})
                    return
                try:
                    body = json.loads(raw)
                    header = self.headers.get(TASK_HEADER)
                    tag = json.loads(header) if header else None
                except json.JSONDecodeError as exc:
                    self._send(400, {"error": {"message": str(exc)}})
                    return
                content = mock.reply(body, tag)
                self._send(200, {
                    "id": f"mock-{mock.request_count}",
                    "object": "chat.completion",
                    "created": 0,
                    "model": body.get("model", "mock"),
                    "choices": [{
                        "index": 0,
                        "message": {"role": "assistant", "content": content},
                        "finish_reason": "stop",
                    }],
                })

        return Handler


def mock_endpoint(
    true_lambda: Sequence[float], entities: Sequence[Entity], seed: int = 0, **kwargs: Any
) -> MockEndpoint:
    """Build (not yet started) a :class:`MockEndpoint`; use it as a context manager."""
    return MockEndpoint(true_lambda, entities, seed, **kwargs)


def synthetic_roster(
    true_lambda: Sequence[float],
    seed: int = 0,
    layoff_effect: float = 1.0,
    ids: Sequence[str] | None = None,
) -> list[Entity]:
    """Entities whose ``external_score`` is the true ability, with random
    budget/staff covariates and ``layoff ~ Bernoulli(logistic(layoff_effect * z))``
    where ``z`` is the standardized ability."""
    lam = np.asarray(true_lambda, dtype=float)
    ids = tuple(ids) if ids is not None else default_ids(len(lam))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 2**32])))
    budget = np.exp(rng.normal(20.0, 1.5, len(lam)))
    staff = np.exp(rng.normal(8.0, 1.2, len(lam)))
    z = (lam - lam.mean()) / lam.std() if lam.std() > 0 else np.zeros_like(lam)
    layoff = rng.random(len(lam)) < 1.0 / (1.0 + np.exp(-layoff_effect * z))
    return [
        Entity(eid, eid, Covariates(float(round(b, 2)), float(round(s)), int(y), float(x)))
        for eid, b, s, y, x in zip(ids, budget, staff, layoff, lam)
    ]
