"""Run the bundled toy pipeline end to end: show answer orderings for one
training example, evaluate three ordering strategies against the mock backend,
and bootstrap-test each against the random baseline.

Usage: python3 scripts/run_toy_experiment.py [--out DIR]
"""

from __future__ import annotations

import argparse
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(REPO / "src"))

from iclforge.harness import RunConfig, compare_runs, run_eval  # noqa: E402
from iclforge.lm import MockModel  # noqa: E402
from iclforge.ordering import strategy_permutation  # noqa: E402

FIXTURES = REPO / "fixtures"
STRATEGIES = ("random", "alphabet", "greedy")


def show_orderings() -> None:
    model = MockModel.from_file(FIXTURES / "mock_f1.json")
    answers = ("new york", "new jersey", "boston")
    print("orderings of ['new york', 'new jersey', 'boston'] under mock_f1:")
    for strategy in ("alphabet", "perplexity", "greedy", "reverse_greedy"):
        permutation = strategy_permutation(
            strategy, answers, prefix="", model=model, example_id="demo", seed=0
        )
        print(f"  {strategy:<16} {' | '.join(answers[i] for i in permutation)}")
    print()


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=None)
    args = parser.parse_args()
    out_root = args.out or Path(tempfile.mkdtemp(prefix="iclforge-toy-"))

    show_orderings()

    reports = {}
    for strategy in STRATEGIES:
        config = RunConfig(
            train_path=str(FIXTURES / "toy_train.jsonl"),
            eval_path=str(FIXTURES / "toy_eval.jsonl"),
            embeddings_path=str(FIXTURES / "toy_embeddings.jsonl"),
            backend=f"mock:{FIXTURES / 'mock_toy.json'}",
            out_dir=str(out_root / strategy),
            retrieval_strategy="similar",
            ordering=strategy,
            seed=0,
        )
        reports[strategy] = run_eval(config)

    metrics = ("em", "p_em", "r_em", "f1_em", "f1_f1", "answer_count")
    header = "strategy".ljust(12) + "".join(m.rjust(14) for m in metrics) + "phi".rjust(10)
    print(header)
    for strategy, report in reports.items():
        phi = report.aggregates.get(f"phi_{strategy}")
        row = strategy.ljust(12)
        row += "".join(f"{report.aggregates[m]:14.4f}" for m in metrics)
        row += f"{phi:10.2f}" if phi is not None else "         -"
        print(row)

    print("\npaired bootstrap vs random (p <= 0.05 marked *):")
    for strategy in STRATEGIES[1:]:
        rows = compare_runs(reports[strategy], reports["random"], resamples=2000, seed=0)
        marks = [
            f"{row['metric']}={row['p_value']:.3f}{'*' if row['significant'] else ''}"
            for row in rows
            if row["metric"] in ("f1_em", "f1_f1", "answer_count")
        ]
        print(f"  {strategy:<10} {'  '.join(marks)}")
    print(f"\nreports under {out_root}")


if __name__ == "__main__":
    main()
