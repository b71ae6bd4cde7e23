"""Language-model oracle: scoring, constrained next-token queries, generation.

Three backends share one interface: a deterministic rule-table mock, an HTTP
client for a remote scoring service, and a persistent on-disk cache wrapper
that is semantically transparent over either.

Mock probability law. The mock tokenizes by splitting on single spaces. For a
context string, the applicable rules are those whose ``context_suffix`` is the
longest suffix (ignoring trailing spaces) matched by any rule. Tokens named by
the applicable rules share probability mass ``1 - u * floor`` proportionally
to their weights, where ``u`` counts the unnamed vocabulary tokens, each of
which receives exactly ``floor``. With no matching rule the distribution is
uniform over the vocabulary. Tokens outside the vocabulary always score
``floor``, keeping every log-probability finite.
"""

from __future__ import annotations

import abc
import hashlib
import json
import logging
import math
import os
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import requests

from .errors import DataError, ProtocolError, TransportError, UsageError

log = logging.getLogger(__name__)

DEFAULT_FLOOR = 1e-6


@dataclass(frozen=True)
class TokenScores:
    """Backend-reported tokens of a continuation with per-token log-probabilities."""

    tokens: tuple[str, ...]
    logprobs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.logprobs):
            raise ProtocolError(
                f"token/logprob length mismatch: {len(self.tokens)} vs {len(self.logprobs)}"
            )
        if not self.tokens:
            raise ProtocolError("empty token list for a non-empty continuation")
        for lp in self.logprobs:
            if lp > 0.0:
                raise ProtocolError(f"log-probability {lp} is positive")

    @property
    def token_count(self) -> int:
        return len(self.tokens)


class LanguageModel(abc.ABC):
    """Scoring and generation oracle. All implementations are deterministic."""

    @property
    @abc.abstractmethod
    def fingerprint(self) -> str:
        """Stable identifier keying caches and knowledge profiles."""

    @abc.abstractmethod
    def score_continuation(self, context: str, continuation: str) -> TokenScores:
        """Per-token log-probabilities of `continuation` given `context`."""

    @abc.abstractmethod
    def next_token_distribution(
        self, context: str, candidates: Sequence[str]
    ) -> list[float]:
        """Log-probability of each candidate as the single next token."""

    @abc.abstractmethod
    def generate(self, prompt: str, stop: Sequence[str], max_tokens: int) -> str:
        """Greedy generation, truncated before the first stop string."""


def _tokenize_with_offsets(text: str) -> list[tuple[str, int]]:
    """Split on single spaces, keeping each token's start offset."""
    tokens: list[tuple[str, int]] = []
    offset = 0
    for piece in text.split(" "):
        if piece:
            tokens.append((piece, offset))
        offset += len(piece) + 1
    return tokens


@dataclass(frozen=True)
class MockRule:
    context_suffix: str
    token: str
    weight: float


class MockModel(LanguageModel):
    """Deterministic rule-table mock with a space-splitting tokenizer."""

    def __init__(
        self,
        vocab: Sequence[str],
        rules: Sequence[MockRule] = (),
        floor: float = DEFAULT_FLOOR,
    ) -> None:
        if not vocab:
            raise DataError("mock vocabulary is empty")
        if len(set(vocab)) != len(vocab):
            raise DataError("mock vocabulary has duplicate tokens")
        for token in vocab:
            if not token or " " in token:
                raise DataError(f"bad vocabulary token {token!r}")
        vocab_set = set(vocab)
        for rule in rules:
            if rule.token not in vocab_set:
                raise DataError(f"rule token {rule.token!r} not in vocabulary")
            if rule.weight <= 0:
                raise DataError(f"rule weight must be positive, got {rule.weight}")
        if not 0 < floor < 1 / (len(vocab) + 1):
            raise DataError(f"floor probability {floor} out of range")
        self.vocab = tuple(vocab)
        self.rules = tuple(rules)
        self.floor = float(floor)
        self.generation_cap_hits = 0
        self._cap_lock = threading.Lock()
        payload = {
            "vocab": list(self.vocab),
            "rules": [
                {"context_suffix": r.context_suffix, "token": r.token, "weight": r.weight}
                for r in self.rules
            ],
            "floor": self.floor,
        }
        digest = hashlib.sha256(
            json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8")
        ).hexdigest()
        self._fingerprint = f"mock:{digest[:16]}"

    @classmethod
    def from_file(cls, path: str | Path) -> "MockModel":
        path = Path(path)
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot load mock fixture {path}: {exc}") from exc
        try:
            rules = tuple(
                MockRule(str(r["context_suffix"]), str(r["token"]), float(r["weight"]))
                for r in payload.get("rules", [])
            )
            return cls(
                vocab=[str(t) for t in payload["vocab"]],
                rules=rules,
                floor=float(payload.get("floor", DEFAULT_FLOOR)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad mock fixture {path}: {exc}") from exc

    @property
    def fingerprint(self) -> str:
        return self._fingerprint

    def _distribution(self, context: str) -> dict[str, float]:
        """Full next-token distribution; sums to exactly 1 over the vocabulary."""
        effective = context.rstrip(" ")
        matching = [r for r in self.rules if effective.endswith(r.context_suffix)]
        if not matching:
            uniform = 1.0 / len(self.vocab)
            return {token: uniform for token in self.vocab}
        longest = max(len(r.context_suffix) for r in matching)
        named: dict[str, float] = {}
        for rule in matching:
            if len(rule.context_suffix) == longest:
                named[rule.token] = named.get(rule.token, 0.0) + rule.weight
        total_weight = sum(named.values())
        unnamed = [t for t in self.vocab if t not in named]
        shared = 1.0 - len(unnamed) * self.floor
        dist = {t: self.floor for t in unnamed}
        for token, weight in named.items():
            dist[token] = weight / total_weight * shared
        return dist

    def _token_logprob(self, context: str, token: str) -> float:
        return math.log(self._distribution(context).get(token, self.floor))

    def score_continuation(self, context: str, continuation: str) -> TokenScores:
        if not continuation:
            raise DataError("continuation must be non-empty")
        spans = _tokenize_with_offsets(continuation)
        if not spans:
            raise DataError(f"continuation {continuation!r} has no tokens")
        tokens: list[str] = []
        logprobs: list[float] = []
        for token, start in spans:
            tokens.append(token)
            logprobs.append(self._token_logprob(context + continuation[:start], token))
        return TokenScores(tuple(tokens), tuple(logprobs))

    def next_token_distribution(
        self, context: str, candidates: Sequence[str]
    ) -> list[float]:
        if not candidates:
            raise DataError("candidate list is empty")
        if len(set(candidates)) != len(candidates):
            raise DataError("candidate list has duplicates")
        for candidate in candidates:
            if not candidate or " " in candidate:
                raise DataError(f"candidate {candidate!r} is not a single token")
        dist = self._distribution(context)
        return [math.log(dist.get(c, self.floor)) for c in candidates]

    def generate(self, prompt: str, stop: Sequence[str], max_tokens: int) -> str:
        if max_tokens < 1:
            raise DataError("max_tokens must be at least 1")
        for s in stop:
            if not s:
                raise DataError("stop strings must be non-empty")
        tokens: list[str] = []
        text = ""
        for _ in range(max_tokens):
            context = prompt if not tokens else prompt + " " + text
            dist = self._distribution(context)
            best_prob = max(dist.values())
            token = min(t for t, p in dist.items() if p == best_prob)
            tokens.append(token)
            text = " ".join(tokens)
            cut = min((i for i in (text.find(s) for s in stop) if i != -1), default=-1)
            if cut != -1:
                return text[:cut]
        with self._cap_lock:
            self.generation_cap_hits += 1
        return text


class RemoteModel(LanguageModel):
    """Client for the HTTP scoring service.

    Transport failures (connection errors, timeouts, 5xx) are retried with
    exponential backoff; protocol violations are never retried.
    """

    def __init__(
        self,
        base_url: str,
        timeout: float = 30.0,
        retries: int = 3,
        backoff: float = 0.5,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff

    @property
    def fingerprint(self) -> str:
        return f"remote:{self.base_url}"

    def _post(self, endpoint: str, payload: dict) -> dict:
        # one-shot posts rather than a shared Session: callers issue requests
        # from multiple threads
        url = f"{self.base_url}{endpoint}"
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                response = requests.post(url, json=payload, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = exc
                log.warning("transport error on %s (attempt %d): %s", url, attempt + 1, exc)
                continue
            if response.status_code >= 500:
                last_error = TransportError(f"{url} returned {response.status_code}")
                log.warning("server error on %s (attempt %d)", url, attempt + 1)
                continue
            if response.status_code != 200:
                raise ProtocolError(f"{url} returned {response.status_code}")
            try:
                body = response.json()
            except ValueError as exc:
                raise ProtocolError(f"{url} returned non-JSON body: {exc}") from exc
            if not isinstance(body, dict):
                raise ProtocolError(f"{url} returned a non-object body")
            return body
        raise TransportError(f"backend unreachable after {self.retries + 1} attempts: {last_error}")

    def score_continuation(self, context: str, continuation: str) -> TokenScores:
        if not continuation:
            raise DataError("continuation must be non-empty")
        body = self._post("/v1/score", {"context": context, "continuation": continuation})
        try:
            tokens = tuple(str(t) for t in body["tokens"])
            logprobs = tuple(float(x) for x in body["logprobs"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"bad score response: {exc}") from exc
        return TokenScores(tokens, logprobs)

    def next_token_distribution(
        self, context: str, candidates: Sequence[str]
    ) -> list[float]:
        if not candidates:
            raise DataError("candidate list is empty")
        body = self._post(
            "/v1/next_token", {"context": context, "candidates": list(candidates)}
        )
        try:
            logprobs = [float(x) for x in body["logprobs"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"bad next_token response: {exc}") from exc
        if len(logprobs) != len(candidates):
            raise ProtocolError(
                f"backend returned {len(logprobs)} logprobs for {len(candidates)} candidates"
            )
        return logprobs

    def generate(self, prompt: str, stop: Sequence[str], max_tokens: int) -> str:
        body = self._post(
            "/v1/generate",
            {"prompt": prompt, "stop": list(stop), "max_tokens": int(max_tokens)},
        )
        try:
            return str(body["text"])
        except KeyError as exc:
            raise ProtocolError(f"bad generate response: {exc}") from exc


class CachedModel(LanguageModel):
    """Persistent cache wrapper; one JSON file per request under `cache_dir`.

    Keys are content hashes over the canonicalized request (including the
    inner backend's fingerprint). Corrupt entries are discarded and recomputed.
    """

    def __init__(self, inner: LanguageModel, cache_dir: str | Path) -> None:
        self.inner = inner
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    @property
    def fingerprint(self) -> str:
        return self.inner.fingerprint

    @property
    def generation_cap_hits(self) -> int | None:
        return getattr(self.inner, "generation_cap_hits", None)

    def _fetch(self, request: dict, compute) -> dict:
        canonical = json.dumps(request, sort_keys=True, ensure_ascii=False)
        key = hashlib.sha256(canonical.encode("utf-8")).hexdigest()
        path = self.cache_dir / f"{key}.json"
        if path.exists():
            try:
                payload = json.loads(path.read_text(encoding="utf-8"))
                if payload["request"] != request:
                    raise KeyError("request mismatch")
                with self._lock:
                    self.hits += 1
                return payload["response"]
            except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
                log.warning("discarding corrupt cache entry %s: %s", path.name, exc)
                path.unlink(missing_ok=True)
        response = compute()
        with self._lock:
            self.misses += 1
        body = json.dumps(
            {"request": request, "response": response}, sort_keys=True, ensure_ascii=False
        )
        fd, tmp = tempfile.mkstemp(dir=self.cache_dir, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(body)
            os.replace(tmp, path)
        except OSError:
            os.unlink(tmp)
            raise
        return response

    def score_continuation(self, context: str, continuation: str) -> TokenScores:
        request = {
            "op": "score",
            "fingerprint": self.fingerprint,
            "context": context,
            "continuation": continuation,
        }

        def compute() -> dict:
            scores = self.inner.score_continuation(context, continuation)
            return {"tokens": list(scores.tokens), "logprobs": list(scores.logprobs)}

        response = self._fetch(request, compute)
        return TokenScores(tuple(response["tokens"]), tuple(response["logprobs"]))

    def next_token_distribution(
        self, context: str, candidates: Sequence[str]
    ) -> list[float]:
        request = {
            "op": "next_token",
            "fingerprint": self.fingerprint,
            "context": context,
            "candidates": list(candidates),
        }
        response = self._fetch(
            request,
            lambda: {"logprobs": self.inner.next_token_distribution(context, candidates)},
        )
        return [float(x) for x in response["logprobs"]]

    def generate(self, prompt: str, stop: Sequence[str], max_tokens: int) -> str:
        request = {
            "op": "generate",
            "fingerprint": self.fingerprint,
            "prompt": prompt,
            "stop": list(stop),
            "max_tokens": int(max_tokens),
        }
        response = self._fetch(
            request, lambda: {"text": self.inner.generate(prompt, stop, max_tokens)}
        )
        return str(response["text"])


def cached(model: LanguageModel, cache_dir: str | Path) -> CachedModel:
    """Wrap any backend with the persistent call cache."""
    return CachedModel(model, cache_dir)


def make_backend(spec: str, cache_dir: str | Path | None = None) -> LanguageModel:
    """Build a backend from a ``mock:<fixture>`` or ``remote:<url>`` spec string."""
    scheme, _, rest = spec.partition(":")
    if scheme == "mock" and rest:
        model: LanguageModel = MockModel.from_file(rest)
    elif scheme == "remote" and rest:
        model = RemoteModel(rest)
    else:
        raise UsageError(
            f"bad backend spec {spec!r}; expected mock:<fixture> or remote:<url>"
        )
    if cache_dir is not None:
        return cached(model, cache_dir)
    return model
