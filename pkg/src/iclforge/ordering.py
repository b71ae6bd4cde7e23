"""Answer-set ordering strategies and single-answer quantile selection.

Knowledge-aware strategies score answers against a prompt prefix ending in
``Answers:``, so the scored continuation is a single space followed by the raw
answer, mirroring the answer's position in a rendered shot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .core import derive_rng
from .errors import DataError, TooManyAnswers
from .lm import LanguageModel

STRATEGIES = (
    "random",
    "alphabet",
    "perplexity",
    "reverse_perplexity",
    "greedy",
    "reverse_greedy",
)

MAX_REORDER_ANSWERS = 20


@dataclass(frozen=True)
class OrderedAnswerSet:
    example_id: str
    strategy: str
    order: tuple[int, ...]
    scores: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if sorted(self.order) != list(range(len(self.order))):
            raise DataError(f"order {self.order} is not a permutation")

    def apply(self, answers: Sequence[str]) -> list[str]:
        return [answers[i] for i in self.order]


def answer_perplexity(prefix: str, answer: str, model: LanguageModel) -> float:
    """Length-normalized perplexity of one answer given the prompt prefix."""
    if not answer.strip():
        raise DataError("cannot score an empty answer")
    scores = model.score_continuation(prefix, " " + answer)
    return math.exp(-sum(scores.logprobs) / scores.token_count)


def _check_reorderable(n: int) -> None:
    if n >= MAX_REORDER_ANSWERS:
        raise TooManyAnswers(
            f"answer set of size {n} exceeds the reordering limit of "
            f"{MAX_REORDER_ANSWERS - 1}"
        )


def perplexity_permutation(
    answers: Sequence[str], prefix: str, model: LanguageModel
) -> tuple[list[int], list[float]]:
    """Indices sorted by ascending perplexity (stable), plus the raw perplexities."""
    scores = [answer_perplexity(prefix, a, model) for a in answers]
    order = sorted(range(len(answers)), key=lambda i: scores[i])
    return order, scores


def greedy_permutation(
    answers: Sequence[str], prefix: str, model: LanguageModel
) -> list[int]:
    """Constrained greedy decoding over the not-yet-emitted answers.

    At every step the permissible tokens are the next tokens of the remaining
    answers consistent with what has been emitted so far; the backend's argmax
    picks among them (ties to the lexicographically smaller token). When the
    emitted tokens complete a remaining answer, that answer is recorded, the
    ``" | "`` delimiter joins the working context, and decoding restarts on
    the remaining set.
    """
    token_seqs = [model.score_continuation(prefix, " " + a).tokens for a in answers]
    remaining = list(range(len(answers)))
    context = prefix
    order: list[int] = []
    while remaining:
        viable = list(remaining)
        emitted = 0
        while True:
            candidates = sorted({token_seqs[i][emitted] for i in viable})
            logprobs = model.next_token_distribution(context, candidates)
            token = max(zip(candidates, logprobs), key=lambda cl: cl[1])[0]
            context += " " + token
            emitted += 1
            viable = [i for i in viable if token_seqs[i][emitted - 1] == token]
            done = [i for i in viable if len(token_seqs[i]) == emitted]
            if done:
                completed = min(done)
                order.append(completed)
                remaining.remove(completed)
                context += " |"
                break
    return order


def alphabet_permutation(answers: Sequence[str]) -> list[int]:
    """Case-insensitive lexicographic order; ties keep the original order."""
    return sorted(range(len(answers)), key=lambda i: answers[i].lower())


def random_permutation(n: int, example_id: str, seed: int) -> list[int]:
    rng = derive_rng(seed, "order_random", example_id)
    return [int(i) for i in rng.permutation(n)]


def order_perplexity(example, prefix: str, model: LanguageModel, reverse: bool = False) -> OrderedAnswerSet:
    _check_reorderable(len(example.answers))
    order, scores = perplexity_permutation(example.answers, prefix, model)
    if reverse:
        order = order[::-1]
    return OrderedAnswerSet(
        example_id=example.id,
        strategy="reverse_perplexity" if reverse else "perplexity",
        order=tuple(order),
        scores=tuple(scores),
    )


def order_greedy(example, prefix: str, model: LanguageModel, reverse: bool = False) -> OrderedAnswerSet:
    _check_reorderable(len(example.answers))
    order = greedy_permutation(example.answers, prefix, model)
    if reverse:
        order = order[::-1]
    return OrderedAnswerSet(
        example_id=example.id,
        strategy="reverse_greedy" if reverse else "greedy",
        order=tuple(order),
    )


def order_alphabet(example) -> OrderedAnswerSet:
    return OrderedAnswerSet(
        example_id=example.id,
        strategy="alphabet",
        order=tuple(alphabet_permutation(example.answers)),
    )


def order_random(example, seed: int) -> OrderedAnswerSet:
    return OrderedAnswerSet(
        example_id=example.id,
        strategy="random",
        order=tuple(random_permutation(len(example.answers), example.id, seed)),
    )


def strategy_permutation(
    strategy: str,
    answers: Sequence[str],
    *,
    prefix: str = "",
    model: LanguageModel | None = None,
    example_id: str = "",
    seed: int = 0,
) -> list[int]:
    """Permutation of answer indices under any named strategy.

    Knowledge-aware strategies require `prefix` and `model` and reject sets of
    20 or more answers; `random` requires `example_id` and `seed`. Reverse
    variants return the exact reversal of their forward counterpart.
    """
    if strategy == "alphabet":
        return alphabet_permutation(answers)
    if strategy == "random":
        return random_permutation(len(answers), example_id, seed)
    _check_reorderable(len(answers))
    if strategy in ("perplexity", "reverse_perplexity"):
        if model is None:
            raise DataError(f"strategy {strategy!r} needs a model backend")
        order, _ = perplexity_permutation(answers, prefix, model)
    elif strategy in ("greedy", "reverse_greedy"):
        if model is None:
            raise DataError(f"strategy {strategy!r} needs a model backend")
        order = greedy_permutation(answers, prefix, model)
    else:
        raise DataError(f"unknown ordering strategy {strategy!r}")
    if strategy.startswith("reverse_"):
        order = order[::-1]
    return order


def select_quantile_answer(example, prefix: str, model: LanguageModel, x: float) -> str:
    """Answer at the x-th quantile of descending perplexity (nearest rank).

    ``x=1.0`` selects the lowest-perplexity, best-known answer; ``x=0.0`` the
    least-known one.
    """
    if not 0.0 <= x <= 1.0:
        raise DataError(f"quantile {x} outside [0, 1]")
    answers = example.answers
    scores = [answer_perplexity(prefix, a, model) for a in answers]
    descending = sorted(range(len(answers)), key=lambda i: (-scores[i], i))
    rank = int(math.floor(x * (len(answers) - 1) + 0.5))
    return answers[descending[rank]]
