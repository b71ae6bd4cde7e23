"""End-to-end evaluation driver: retrieval, ordering, prompting, generation,
metrics, and report persistence.

A report directory holds three artifacts: ``records.jsonl`` (one record per
evaluation example, flushed incrementally in dataset order so interrupted runs
can resume), ``summary.tsv`` (aggregate metrics, full-precision), and
``manifest.json`` (config snapshot, fingerprint, seed, counters, timestamps).
Records and summary are byte-identical across reruns and across job counts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import __version__
from .core import (
    EmbeddingTable,
    Example,
    Prediction,
    load_dataset,
    load_embeddings,
    normalize_answer,
)
from .errors import DataError, TooManyAnswers, UsageError
from .lm import LanguageModel, make_backend
from .metrics import (
    AdherenceResult,
    adherence_phi,
    not_in_prompt_scores,
    paired_bootstrap,
    set_exact_match,
    set_scores,
    strategy_ranks,
)
from .ordering import MAX_REORDER_ANSWERS, strategy_permutation
from .ordering import STRATEGIES as ORDERING_STRATEGIES
from .prompting import render_prompt
from .retrieval import STRATEGIES as RETRIEVAL_STRATEGIES
from .retrieval import RetrievalConfig, retrieve

log = logging.getLogger(__name__)

RECORDS_FILE = "records.jsonl"
SUMMARY_FILE = "summary.tsv"
MANIFEST_FILE = "manifest.json"
META_FILE = "run_meta.json"

GENERATION_STOP = "\n"
SIGNIFICANCE_LEVEL = 0.05

SCORE_KEYS = ("em", "p_em", "r_em", "f1_em", "p_f1", "r_f1", "f1_f1", "answer_count")


@dataclass
class RunConfig:
    train_path: str
    eval_path: str
    embeddings_path: str
    backend: str
    out_dir: str
    retrieval_strategy: str = "similar"
    k: int = 5
    ordering: str = "random"
    fixed_set_ids: tuple[str, ...] | None = None
    seed: int = 0
    cache_dir: str | None = None
    max_tokens: int = 256
    jobs: int = 1
    eval_split: str = "dev"
    ordering_prefix_k: int = 5
    compute_adherence: bool = True

    def __post_init__(self) -> None:
        if self.ordering not in ORDERING_STRATEGIES:
            raise UsageError(f"unknown ordering strategy {self.ordering!r}")
        if self.retrieval_strategy not in RETRIEVAL_STRATEGIES:
            raise UsageError(f"unknown retrieval strategy {self.retrieval_strategy!r}")
        if self.fixed_set_ids is not None and not self.fixed_set_ids:
            raise UsageError("fixed example set is empty")
        if self.k < 1 or self.max_tokens < 1 or self.jobs < 1:
            raise UsageError("k, max_tokens, and jobs must be positive")

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        if data["fixed_set_ids"] is not None:
            data["fixed_set_ids"] = list(data["fixed_set_ids"])
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        if data.get("fixed_set_ids") is not None:
            data = dict(data, fixed_set_ids=tuple(data["fixed_set_ids"]))
        return cls(**data)


@dataclass(frozen=True)
class ExampleRecord:
    example_id: str
    prompt_sha256: str
    shot_ids: tuple[str, ...]
    answers: tuple[str, ...]
    raw_text: str
    scores: dict

    def to_json(self) -> str:
        return json.dumps(
            {
                "id": self.example_id,
                "prompt_sha256": self.prompt_sha256,
                "shot_ids": list(self.shot_ids),
                "answers": list(self.answers),
                "raw_text": self.raw_text,
                "scores": self.scores,
            },
            sort_keys=True,
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, line: str) -> "ExampleRecord":
        data = json.loads(line)
        return cls(
            example_id=data["id"],
            prompt_sha256=data["prompt_sha256"],
            shot_ids=tuple(data["shot_ids"]),
            answers=tuple(data["answers"]),
            raw_text=data["raw_text"],
            scores=data["scores"],
        )

    @property
    def prediction(self) -> Prediction:
        return Prediction(self.example_id, self.answers, self.raw_text)


@dataclass
class EvalReport:
    records: list[ExampleRecord]
    aggregates: dict[str, float]
    manifest: dict = field(default_factory=dict)


def _prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def _atomic_write(path: Path, content: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(content)
    os.replace(tmp, path)


def _config_hash(config: RunConfig) -> str:
    # jobs does not affect results, so resuming across job counts is allowed
    snapshot = {k: v for k, v in config.to_dict().items() if k != "jobs"}
    return hashlib.sha256(
        json.dumps(snapshot, sort_keys=True).encode("utf-8")
    ).hexdigest()


class _ShotPlanner:
    """Per-run memo of shot prefixes and strategy-ordered answer lists."""

    def __init__(
        self,
        config: RunConfig,
        pool: list[Example],
        table: EmbeddingTable,
        model: LanguageModel,
    ) -> None:
        self.config = config
        self.pool = pool
        self.table = table
        self.model = model
        self._prefixes: dict[str, str] = {}
        self._orders: dict[str, tuple[str, ...]] = {}
        self._lock = threading.Lock()
        self.reorder_skipped: set[str] = set()

    def shot_prefix(self, shot: Example) -> str:
        with self._lock:
            cached = self._prefixes.get(shot.id)
        if cached is not None:
            return cached
        others = [ex for ex in self.pool if ex.id != shot.id]
        k = min(self.config.ordering_prefix_k, len(others))
        if k >= 1:
            peers = retrieve(
                shot, others, self.table, RetrievalConfig(strategy="similar", k=k)
            )
        else:
            peers = []
        prefix = render_prompt(
            [(p.question, p.answers) for p in peers], shot.question
        )
        with self._lock:
            self._prefixes[shot.id] = prefix
        return prefix

    def ordered_answers(self, shot: Example) -> tuple[str, ...]:
        with self._lock:
            cached = self._orders.get(shot.id)
        if cached is not None:
            return cached
        if len(shot.answers) >= MAX_REORDER_ANSWERS:
            # batch policy: oversized shots keep gold order, tallied in the manifest
            ordered = shot.answers
            with self._lock:
                self.reorder_skipped.add(shot.id)
                self._orders[shot.id] = ordered
            return ordered
        needs_model = self.config.ordering in (
            "perplexity",
            "reverse_perplexity",
            "greedy",
            "reverse_greedy",
        )
        permutation = strategy_permutation(
            self.config.ordering,
            shot.answers,
            prefix=self.shot_prefix(shot) if needs_model else "",
            model=self.model,
            example_id=shot.id,
            seed=self.config.seed,
        )
        ordered = tuple(shot.answers[i] for i in permutation)
        with self._lock:
            self._orders[shot.id] = ordered
        return ordered


def _score_example(
    example: Example,
    prediction: Prediction,
    prompt_answer_pool: set[str],
) -> tuple[dict, bool]:
    exact = set_scores(prediction.answers, example.answers, matcher="exact")
    token = set_scores(prediction.answers, example.answers, matcher="token_f1")
    scores = {
        "em": float(set_exact_match(prediction.answers, example.answers)),
        "p_em": exact.precision,
        "r_em": exact.recall,
        "f1_em": exact.f1,
        "p_f1": token.precision,
        "r_f1": token.recall,
        "f1_f1": token.f1,
        "answer_count": float(len(prediction.answers)),
    }
    nip = not_in_prompt_scores(prediction, example.answers, prompt_answer_pool)
    skipped = nip is None
    scores["not_in_prompt_p"] = None if skipped else nip.precision
    scores["not_in_prompt_r"] = None if skipped else nip.recall
    return scores, skipped


def _build_prompt(
    example: Example,
    shots: Sequence[Example],
    planner: _ShotPlanner,
) -> tuple[str, tuple[str, ...], set[str]]:
    shot_pairs = [(s.question, planner.ordered_answers(s)) for s in shots]
    prompt = render_prompt(shot_pairs, example.question)
    prompt_answer_pool = {
        normalize_answer(a) for _, answers in shot_pairs for a in answers
    }
    return prompt, tuple(s.id for s in shots), prompt_answer_pool


def run_eval(config: RunConfig) -> EvalReport:
    """Evaluate the configured strategy over the eval split and persist a report."""
    started = datetime.now(timezone.utc).isoformat()
    train = load_dataset(config.train_path, split="train")
    eval_ds = load_dataset(config.eval_path, split=config.eval_split)
    table = load_embeddings(config.embeddings_path, train)
    table.require(eval_ds.ids())
    model = make_backend(config.backend, config.cache_dir)

    pool = [ex for ex in train if ex.prompt_safe]
    shot_duty_excluded = len(train) - len(pool)
    if not pool:
        raise DataError("no shot-safe training examples")

    fixed_shots: list[Example] | None = None
    if config.fixed_set_ids is not None:
        fixed_shots = [train.by_id(i) for i in config.fixed_set_ids]
        for shot in fixed_shots:
            if not shot.prompt_safe:
                raise DataError(f"fixed-set member {shot.id!r} is not shot-safe")

    planner = _ShotPlanner(config, pool, table, model)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records_path = out_dir / RECORDS_FILE
    meta_path = out_dir / META_FILE

    cfg_hash = _config_hash(config)
    resumed: dict[str, ExampleRecord] = {}
    if records_path.exists() and meta_path.exists():
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            meta = {}
        if meta.get("config_hash") == cfg_hash:
            for line in records_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    record = ExampleRecord.from_json(line)
                    resumed[record.example_id] = record
            log.info("resuming run with %d completed examples", len(resumed))
    _atomic_write(meta_path, json.dumps({"config_hash": cfg_hash}))

    not_in_prompt_skips = 0
    retrieval_cfg = RetrievalConfig(
        strategy=config.retrieval_strategy, k=config.k, seed=config.seed
    )

    def evaluate(example: Example) -> tuple[ExampleRecord, bool, str]:
        if fixed_shots is not None:
            shots: Sequence[Example] = fixed_shots
        else:
            local_pool = [ex for ex in pool if ex.id != example.id]
            shots = retrieve(example, local_pool, table, retrieval_cfg)
        prompt, shot_ids, prompt_answer_pool = _build_prompt(example, shots, planner)
        raw = model.generate(prompt, stop=[GENERATION_STOP], max_tokens=config.max_tokens)
        prediction = Prediction.from_generation(example.id, raw)
        scores, nip_skipped = _score_example(example, prediction, prompt_answer_pool)
        record = ExampleRecord(
            example_id=example.id,
            prompt_sha256=_prompt_hash(prompt),
            shot_ids=shot_ids,
            answers=prediction.answers,
            raw_text=raw,
            scores=scores,
        )
        return record, nip_skipped, prompt

    todo = [ex for ex in eval_ds if ex.id not in resumed]
    records: list[ExampleRecord] = [resumed[ex.id] for ex in eval_ds if ex.id in resumed]
    prompts: dict[str, str] = {}
    mode = "a" if resumed else "w"
    with records_path.open(mode, encoding="utf-8") as fh:

        def flush(outcome: tuple[ExampleRecord, bool, str]) -> None:
            nonlocal not_in_prompt_skips
            record, nip_skipped, prompt = outcome
            not_in_prompt_skips += int(nip_skipped)
            prompts[record.example_id] = prompt
            records.append(record)
            fh.write(record.to_json() + "\n")
            fh.flush()

        if config.jobs > 1 and len(todo) > 1:
            with ThreadPoolExecutor(max_workers=config.jobs) as executor:
                futures = [executor.submit(evaluate, ex) for ex in todo]
                # consume in submission order so the on-disk prefix stays sorted
                for future in futures:
                    flush(future.result())
        else:
            for example in todo:
                flush(evaluate(example))

    aggregates = compute_aggregates(records)
    adherence_skipped = 0
    if config.compute_adherence and config.ordering != "random":
        for record in records:
            if record.example_id not in prompts:
                example = eval_ds.by_id(record.example_id)
                if fixed_shots is not None:
                    shots = fixed_shots
                else:
                    local_pool = [ex for ex in pool if ex.id != example.id]
                    shots = retrieve(example, local_pool, table, retrieval_cfg)
                prompt, _, _ = _build_prompt(example, shots, planner)
                if _prompt_hash(prompt) != record.prompt_sha256:
                    raise DataError(
                        f"re-derived prompt for {record.example_id!r} does not match "
                        "the stored prompt hash; inputs changed since the run"
                    )
                prompts[record.example_id] = prompt
        try:
            result = adherence_for_records(
                records, config.ordering, prompts, model, seed=config.seed
            )
            aggregates[f"phi_{config.ordering}"] = result.phi
        except DataError as exc:
            log.warning("adherence not computed: %s", exc)
            adherence_skipped = len(records)

    summary = render_summary(aggregates)
    _atomic_write(out_dir / SUMMARY_FILE, summary)

    cap_hits = getattr(model, "generation_cap_hits", None)
    manifest = {
        "tool_version": __version__,
        "config": config.to_dict(),
        "config_hash": cfg_hash,
        "model_fingerprint": model.fingerprint,
        "seed": config.seed,
        "started_at": started,
        "finished_at": datetime.now(timezone.utc).isoformat(),
        "counts": {
            "examples": len(records),
            "resumed": len(resumed),
            "shot_duty_excluded": shot_duty_excluded,
            "reorder_skipped": len(planner.reorder_skipped),
            "not_in_prompt_skipped": not_in_prompt_skips,
            "adherence_skipped": adherence_skipped,
            "cache_hits": getattr(model, "hits", None),
            "cache_misses": getattr(model, "misses", None),
            "generation_cap_hits": cap_hits,
        },
    }
    _atomic_write(out_dir / MANIFEST_FILE, json.dumps(manifest, indent=2, sort_keys=True))
    return EvalReport(records=records, aggregates=aggregates, manifest=manifest)


def adherence_for_records(
    records: Sequence[ExampleRecord],
    strategy: str,
    prompts: dict[str, str],
    model: LanguageModel | None,
    seed: int = 0,
) -> AdherenceResult:
    """Adherence of each record's predicted answers to the given strategy.

    Predictions that cannot be reordered (20 or more answers) are skipped.
    """
    if strategy == "random":
        raise DataError("adherence against the random strategy is not defined")

    def reorderer(prediction: Prediction):
        if not prediction.answers:
            return []
        try:
            permutation = strategy_permutation(
                strategy,
                prediction.answers,
                prefix=prompts.get(prediction.example_id, ""),
                model=model,
                example_id=prediction.example_id,
                seed=seed,
            )
        except TooManyAnswers:
            return None
        return strategy_ranks(prediction.answers, permutation)

    return adherence_phi([r.prediction for r in records], reorderer)


def derive_prompts(
    config: RunConfig, records: Sequence[ExampleRecord]
) -> tuple[dict[str, str], LanguageModel]:
    """Re-derive each record's prompt from the run config, checking hashes.

    Evaluation runs are deterministic, so the prompts can be reconstructed from
    the config plus the input files; the stored hash guards against drift.
    """
    train = load_dataset(config.train_path, split="train")
    eval_ds = load_dataset(config.eval_path, split=config.eval_split)
    table = load_embeddings(config.embeddings_path, train)
    table.require(eval_ds.ids())
    model = make_backend(config.backend, config.cache_dir)
    pool = [ex for ex in train if ex.prompt_safe]
    planner = _ShotPlanner(config, pool, table, model)
    fixed_shots = (
        [train.by_id(i) for i in config.fixed_set_ids]
        if config.fixed_set_ids is not None
        else None
    )
    retrieval_cfg = RetrievalConfig(
        strategy=config.retrieval_strategy, k=config.k, seed=config.seed
    )
    prompts: dict[str, str] = {}
    for record in records:
        example = eval_ds.by_id(record.example_id)
        if fixed_shots is not None:
            shots: Sequence[Example] = fixed_shots
        else:
            local_pool = [ex for ex in pool if ex.id != example.id]
            shots = retrieve(example, local_pool, table, retrieval_cfg)
        prompt, _, _ = _build_prompt(example, shots, planner)
        if _prompt_hash(prompt) != record.prompt_sha256:
            raise DataError(
                f"re-derived prompt for {record.example_id!r} does not match the "
                "stored prompt hash; inputs changed since the run"
            )
        prompts[record.example_id] = prompt
    return prompts, model


def adherence_from_report(
    out_dir: str | Path,
    strategy: str,
    backend: str | None = None,
    cache_dir: str | None = None,
) -> AdherenceResult:
    """Compute adherence of a stored report's predictions to any strategy."""
    report = load_report(out_dir)
    if strategy == "alphabet":
        return adherence_for_records(report.records, strategy, {}, None)
    config_data = report.manifest.get("config")
    if config_data is None:
        raise DataError(f"report in {out_dir} has no manifest config to re-derive prompts")
    config = RunConfig.from_dict(dict(config_data))
    if backend is not None:
        config.backend = backend
    if cache_dir is not None:
        config.cache_dir = cache_dir
    prompts, model = derive_prompts(config, report.records)
    return adherence_for_records(
        report.records, strategy, prompts, model, seed=config.seed
    )


def compute_aggregates(records: Sequence[ExampleRecord]) -> dict[str, float]:
    """Mean of every per-example score over the records that carry it."""
    if not records:
        raise DataError("no records to aggregate")
    aggregates: dict[str, float] = {"n_examples": float(len(records))}
    for key in SCORE_KEYS:
        values = [r.scores[key] for r in records if r.scores.get(key) is not None]
        if values:
            aggregates[key] = sum(values) / len(values)
    for key in ("not_in_prompt_p", "not_in_prompt_r"):
        values = [r.scores[key] for r in records if r.scores.get(key) is not None]
        if values:
            aggregates[key] = sum(values) / len(values)
    return aggregates


def render_summary(aggregates: dict[str, float]) -> str:
    lines = [f"{key}\t{aggregates[key]!r}" for key in sorted(aggregates)]
    return "\n".join(lines) + "\n"


def parse_summary(text: str) -> dict[str, float]:
    out: dict[str, float] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("\t")
        out[key] = float(value)
    return out


def load_report(out_dir: str | Path) -> EvalReport:
    """Load a report directory, checking aggregates against the records."""
    out_dir = Path(out_dir)
    records_path = out_dir / RECORDS_FILE
    if not records_path.exists():
        raise DataError(f"no {RECORDS_FILE} in {out_dir}")
    records = [
        ExampleRecord.from_json(line)
        for line in records_path.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    if not records:
        raise DataError(f"{records_path} holds no records")
    manifest = {}
    manifest_path = out_dir / MANIFEST_FILE
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    summary_path = out_dir / SUMMARY_FILE
    aggregates = compute_aggregates(records)
    if summary_path.exists():
        stored = parse_summary(summary_path.read_text(encoding="utf-8"))
        for key, value in aggregates.items():
            if key not in stored or abs(stored[key] - value) > 1e-12:
                raise DataError(
                    f"summary value for {key!r} does not match the records "
                    f"({stored.get(key)} vs {value})"
                )
        aggregates = stored
    return EvalReport(records=records, aggregates=aggregates, manifest=manifest)


def compare_runs(
    report_a: EvalReport,
    report_b: EvalReport,
    resamples: int = 10_000,
    seed: int = 0,
) -> list[dict]:
    """Per-metric paired bootstrap of run a against run b (the baseline)."""
    ids_a = [r.example_id for r in report_a.records]
    ids_b = [r.example_id for r in report_b.records]
    if sorted(ids_a) != sorted(ids_b):
        raise DataError("runs cover different evaluation ids")
    by_id_b = {r.example_id: r for r in report_b.records}
    rows = []
    for key in SCORE_KEYS:
        scores_a = []
        scores_b = []
        for record in report_a.records:
            va = record.scores.get(key)
            vb = by_id_b[record.example_id].scores.get(key)
            if va is None or vb is None:
                continue
            scores_a.append(va)
            scores_b.append(vb)
        if not scores_a:
            continue
        p_value = paired_bootstrap(scores_a, scores_b, resamples=resamples, seed=seed)
        mean_a = sum(scores_a) / len(scores_a)
        mean_b = sum(scores_b) / len(scores_b)
        rows.append(
            {
                "metric": key,
                "mean_a": mean_a,
                "mean_b": mean_b,
                "delta": mean_a - mean_b,
                "p_value": p_value,
                "significant": p_value <= SIGNIFICANCE_LEVEL,
            }
        )
    return rows
