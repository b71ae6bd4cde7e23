"""Knowledge profiling and construction of Unknown/Random/HalfKnown/Known sets.

A profile records how well the backing model already answers a training
example when prompted with its most similar peers: the set-level exact-match
F1 of the parsed generation, per-answer perplexities under the same prefix,
and the example's average similarity to the rest of the candidate pool.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Dataset, EmbeddingTable, Example, derive_rng
from .errors import DataError
from .lm import LanguageModel
from .metrics import set_scores
from .ordering import answer_perplexity
from .prompting import parse_answers, render_prompt
from .retrieval import RetrievalConfig, retrieve, similarity

log = logging.getLogger(__name__)

CONDITIONS = ("unknown", "random", "halfknown", "known")

DEFAULT_HALFKNOWN_BAND = (0.4, 0.6)
DEFAULT_SET_SIZE = 5
DEFAULT_N_SETS = 4
PROFILE_MAX_TOKENS = 256


@dataclass(frozen=True)
class KnowledgeProfile:
    example_id: str
    f1_em: float
    answer_perplexities: tuple[float, ...]
    avg_similarity: float
    model_fingerprint: str


@dataclass(frozen=True)
class ExampleSet:
    condition: str
    member_ids: tuple[str, ...]
    seed: int


def profile_example(
    example: Example,
    pool: list[Example],
    table: EmbeddingTable,
    model: LanguageModel,
    k: int = 5,
) -> KnowledgeProfile:
    """Profile one example against the pool it will serve alongside."""
    if any(ex.id == example.id for ex in pool):
        raise DataError(f"pool contains the profiled example {example.id!r}")
    if not pool:
        raise DataError("empty candidate pool")
    shots = retrieve(
        example, pool, table, RetrievalConfig(strategy="similar", k=min(k, len(pool)))
    )
    prefix = render_prompt([(s.question, s.answers) for s in shots], example.question)
    raw = model.generate(prefix, stop=["\n"], max_tokens=PROFILE_MAX_TOKENS)
    predicted = parse_answers(raw)
    f1_em = set_scores(predicted, example.answers, matcher="exact").f1
    perplexities = tuple(
        answer_perplexity(prefix, answer, model) for answer in example.answers
    )
    avg_similarity = float(
        np.mean([similarity(example.id, other.id, table) for other in pool])
    )
    return KnowledgeProfile(
        example_id=example.id,
        f1_em=f1_em,
        answer_perplexities=perplexities,
        avg_similarity=avg_similarity,
        model_fingerprint=model.fingerprint,
    )


def profile_dataset(
    dataset: Dataset,
    table: EmbeddingTable,
    model: LanguageModel,
    k: int = 5,
    store_path: str | Path | None = None,
) -> list[KnowledgeProfile]:
    """Profile every shot-safe example, reusing stored profiles when present.

    Stored profiles only count when their model fingerprint matches, so mock
    and remote profiles never mix.
    """
    candidates = [ex for ex in dataset if ex.prompt_safe]
    existing: dict[str, KnowledgeProfile] = {}
    if store_path is not None and Path(store_path).exists():
        for profile in load_profiles(store_path):
            if profile.model_fingerprint == model.fingerprint:
                existing[profile.example_id] = profile
    profiles: list[KnowledgeProfile] = []
    for example in candidates:
        if example.id in existing:
            profiles.append(existing[example.id])
            continue
        pool = [ex for ex in candidates if ex.id != example.id]
        profiles.append(profile_example(example, pool, table, model, k=k))
    if store_path is not None:
        save_profiles(profiles, store_path)
    return profiles


def save_profiles(profiles: list[KnowledgeProfile], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for p in profiles:
            record = {
                "example_id": p.example_id,
                "f1_em": p.f1_em,
                "answer_perplexities": list(p.answer_perplexities),
                "avg_similarity": p.avg_similarity,
                "model_fingerprint": p.model_fingerprint,
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_profiles(path: str | Path) -> list[KnowledgeProfile]:
    profiles = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            profiles.append(
                KnowledgeProfile(
                    example_id=str(record["example_id"]),
                    f1_em=float(record["f1_em"]),
                    answer_perplexities=tuple(record["answer_perplexities"]),
                    avg_similarity=float(record["avg_similarity"]),
                    model_fingerprint=str(record["model_fingerprint"]),
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: line {lineno}: bad profile record: {exc}") from exc
    return profiles


def median_similarity_filter(profiles: list[KnowledgeProfile], n: int) -> list[str]:
    """Ids of the n candidates nearest the median average-similarity.

    Half are taken from strictly below the median and half from strictly above
    (the extra one from below when n is odd); candidates exactly at the median
    may fill either side. Output is ordered closest-to-median first.
    """
    if n < 1:
        raise DataError("n must be positive")
    if n > len(profiles):
        raise DataError(f"requested {n} candidates from {len(profiles)} profiles")
    median = float(np.median([p.avg_similarity for p in profiles]))

    def closeness(p: KnowledgeProfile) -> tuple[float, str]:
        return (abs(p.avg_similarity - median), p.example_id)

    below = sorted((p for p in profiles if p.avg_similarity < median), key=closeness)
    above = sorted((p for p in profiles if p.avg_similarity > median), key=closeness)
    at_median = sorted((p for p in profiles if p.avg_similarity == median), key=closeness)

    need_below = n - n // 2
    need_above = n // 2
    take_below = below[:need_below]
    short = need_below - len(take_below)
    take_below += at_median[:short]
    at_median = at_median[short:] if short else at_median
    take_above = above[:need_above]
    short = need_above - len(take_above)
    take_above += at_median[:short]
    if len(take_below) < need_below or len(take_above) < need_above:
        raise DataError(
            f"cannot take {need_below} below and {need_above} above the median: "
            f"{len(below)} below, {len(above)} above, {len(at_median)} at the median"
        )
    return [p.example_id for p in sorted(take_below + take_above, key=closeness)]


@dataclass(frozen=True)
class SetBuildResult:
    sets: tuple[ExampleSet, ...]
    eligible_count: int
    fallback_used: bool = False
    fallback_threshold: float | None = None


def build_sets(
    profiles: list[KnowledgeProfile],
    condition: str,
    n_sets: int = DEFAULT_N_SETS,
    set_size: int = DEFAULT_SET_SIZE,
    seed: int = 0,
    halfknown_band: tuple[float, float] = DEFAULT_HALFKNOWN_BAND,
) -> SetBuildResult:
    """Sample disjoint in-context example sets for one knowledge condition.

    Unknown members scored exactly 0, known members exactly 1 (falling back to
    the highest scorers when too few reach 1), halfknown members fall inside
    `halfknown_band`, and random draws from all candidates.
    """
    if condition not in CONDITIONS:
        raise DataError(f"unknown condition {condition!r}")
    if n_sets < 1 or set_size < 1:
        raise DataError("n_sets and set_size must be positive")
    need = n_sets * set_size
    fallback_used = False
    fallback_threshold: float | None = None
    if condition == "unknown":
        eligible = [p for p in profiles if p.f1_em == 0.0]
    elif condition == "known":
        eligible = [p for p in profiles if p.f1_em == 1.0]
        if len(eligible) < need:
            if len(profiles) < need:
                raise DataError(
                    f"need {need} candidates but only {len(profiles)} profiled"
                )
            ranked = sorted(profiles, key=lambda p: (-p.f1_em, p.example_id))
            eligible = ranked[:need]
            fallback_used = True
            fallback_threshold = min(p.f1_em for p in eligible)
            log.warning(
                "known condition fell back to the top %d scorers (lowest f1_em %.3f)",
                need,
                fallback_threshold,
            )
    elif condition == "halfknown":
        lo, hi = halfknown_band
        eligible = [p for p in profiles if lo <= p.f1_em <= hi]
    else:
        eligible = list(profiles)
    if len(eligible) < need:
        raise DataError(
            f"condition {condition!r} has {len(eligible)} qualifying candidates; "
            f"{need} required for {n_sets} sets of {set_size}"
        )
    ordered = sorted(eligible, key=lambda p: p.example_id)
    rng = derive_rng(seed, "build_sets", condition)
    shuffled = [ordered[int(i)] for i in rng.permutation(len(ordered))]
    sets = tuple(
        ExampleSet(
            condition=condition,
            member_ids=tuple(
                p.example_id for p in shuffled[i * set_size : (i + 1) * set_size]
            ),
            seed=seed,
        )
        for i in range(n_sets)
    )
    return SetBuildResult(
        sets=sets,
        eligible_count=len(eligible),
        fallback_used=fallback_used,
        fallback_threshold=fallback_threshold,
    )


def save_sets(sets: tuple[ExampleSet, ...] | list[ExampleSet], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in sets:
            fh.write(
                json.dumps(
                    {"condition": s.condition, "member_ids": list(s.member_ids), "seed": s.seed},
                    sort_keys=True,
                )
                + "\n"
            )


def load_sets(path: str | Path) -> list[ExampleSet]:
    sets = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            sets.append(
                ExampleSet(
                    condition=str(record["condition"]),
                    member_ids=tuple(str(m) for m in record["member_ids"]),
                    seed=int(record["seed"]),
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: line {lineno}: bad set record: {exc}") from exc
    return sets
