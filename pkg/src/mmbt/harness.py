"""Seeded Monte Carlo trials, outcome taxonomy and run summaries."""

from __future__ import annotations

import enum
import json
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Any, Iterable, Optional, Sequence, Union

from mmbt.bt import Status, TickRecord
from mmbt.config import RunConfig
from mmbt.labsim import FUSED_CONDITIONS, LabTrial, VoteLog

Z_95 = statistics.NormalDist().inv_cdf(0.975)


class EmptyTrials(ValueError):
    pass


class Outcome(str, enum.Enum):
    TRUE_SUCCESS = "TrueSuccess"
    FALSE_SUCCESS = "FalseSuccess"
    DETECTED_FAILURE = "DetectedFailure"
    FALSE_FAILURE = "FalseFailure"


def classify_outcome(bt_verdict: bool, ground_truth: Union[bool, Any]) -> Outcome:
    """Cross the tree's verdict with the world's ground truth.

    ``ground_truth`` may be a bool or a world exposing ``succeeded``.
    """
    truth = ground_truth if isinstance(ground_truth, bool) else bool(ground_truth.succeeded)
    if bt_verdict:
        return Outcome.TRUE_SUCCESS if truth else Outcome.FALSE_SUCCESS
    return Outcome.FALSE_FAILURE if truth else Outcome.DETECTED_FAILURE


@dataclass
class TrialReport:
    trial: int
    bt_verdict: bool
    ground_truth: bool
    outcome: Outcome
    duration: float
    fasten_iterations: Optional[int] = None
    guard_tripped: bool = False
    votes: list[VoteLog] = field(default_factory=list)


def wilson_interval(successes: int, trials: int, z: float = Z_95) -> tuple[float, float]:
    if trials <= 0:
        raise EmptyTrials("Wilson interval needs at least one trial")
    p = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    centre = (p + z2 / (2 * trials)) / denom
    half = z / denom * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials))
    # the bounds are exact at the edges; avoid rounding residue there
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == trials else min(1.0, centre + half)
    return (lo, hi)


@dataclass
class ConditionStats:
    queries: int
    correct: int
    positives: int
    true_positives: int
    negatives: int
    true_negatives: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.queries

    @property
    def sensitivity(self) -> Optional[float]:
        return self.true_positives / self.positives if self.positives else None

    @property
    def specificity(self) -> Optional[float]:
        return self.true_negatives / self.negatives if self.negatives else None


def condition_stats(reports: Iterable[TrialReport]) -> dict[str, ConditionStats]:
    counts: dict[str, list[int]] = {}
    for report in reports:
        for v in report.votes:
            c = counts.setdefault(v.condition, [0, 0, 0, 0, 0, 0])
            c[0] += 1
            c[1] += v.verdict == v.truth
            if v.truth:
                c[2] += 1
                c[3] += v.verdict
            else:
                c[4] += 1
                c[5] += not v.verdict
    return {name: ConditionStats(*c) for name, c in sorted(counts.items())}


@dataclass
class RunSummary:
    trials: int
    success_rate: float
    wilson_95: tuple[float, float]
    mean_duration_s: float
    std_duration_s: float
    mean_fasten_iterations: Optional[float]
    outcome_histogram: dict[str, int]
    guard_trips: int
    per_condition: dict[str, ConditionStats]
    config_digest: str = ""
    seed: int = 0

    def report_body(self) -> dict[str, Any]:
        return {
            "config_digest": self.config_digest,
            "seed": self.seed,
            "trials": self.trials,
            "success_rate": self.success_rate,
            "wilson_95": list(self.wilson_95),
            "mean_duration_s": self.mean_duration_s,
            "std_duration_s": self.std_duration_s,
            "mean_fasten_iterations": self.mean_fasten_iterations,
            "outcome_histogram": dict(self.outcome_histogram),
            "guard_trips": self.guard_trips,
            "per_condition_fused_empirical_accuracy": {
                name: s.accuracy for name, s in self.per_condition.items()
            },
            "per_condition_queries": {name: s.queries for name, s in self.per_condition.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.report_body(), sort_keys=True, indent=2) + "\n"


def summarize(reports: Sequence[TrialReport], config_digest: str = "", seed: int = 0) -> RunSummary:
    if not reports:
        raise EmptyTrials("cannot summarize zero trials")
    reports = sorted(reports, key=lambda r: r.trial)
    n = len(reports)
    histogram = {o.value: 0 for o in Outcome}
    for r in reports:
        histogram[r.outcome.value] += 1
    wins = histogram[Outcome.TRUE_SUCCESS.value]
    durations = [r.duration for r in reports]
    mean = math.fsum(durations) / n
    std = math.sqrt(math.fsum((d - mean) ** 2 for d in durations) / (n - 1)) if n > 1 else 0.0
    iters = [r.fasten_iterations for r in reports if r.fasten_iterations is not None]
    return RunSummary(
        trials=n,
        success_rate=wins / n,
        wilson_95=wilson_interval(wins, n),
        mean_duration_s=mean,
        std_duration_s=std,
        mean_fasten_iterations=(sum(iters) / len(iters)) if iters else None,
        outcome_histogram=histogram,
        guard_trips=sum(r.guard_tripped for r in reports),
        per_condition=condition_stats(reports),
        config_digest=config_digest,
        seed=seed,
    )


def run_trial(config: RunConfig, trial: int, trace=None, audit: bool = False) -> TrialReport:
    lab = LabTrial(config.setup, trial, config.seed)
    result = lab.run(config.tree, trace=trace, audit=audit)
    world = result.world
    verdict = result.status is Status.SUCCESS
    truth = bool(world.succeeded)
    capping = config.task == "capping"
    return TrialReport(
        trial=trial,
        bt_verdict=verdict,
        ground_truth=truth,
        outcome=classify_outcome(verdict, truth),
        duration=result.duration,
        fasten_iterations=world.fasten_iter if capping else None,
        guard_tripped=bool(getattr(world, "guard_tripped", False)),
        votes=result.votes,
    )


def _run_chunk(config: RunConfig, trials: range) -> list[TrialReport]:
    return [run_trial(config, t) for t in trials]


def _chunks(n: int, parts: int) -> list[range]:
    parts = max(1, min(parts, n))
    bounds = [n * i // parts for i in range(parts + 1)]
    return [range(bounds[i], bounds[i + 1]) for i in range(parts)]


def run_trials(config: RunConfig, workers: int = 1) -> tuple[RunSummary, list[TrialReport]]:
    """Run ``config.trials`` trials. Trial t always uses the stream for (seed, t)."""
    if workers <= 1:
        reports = _run_chunk(config, range(config.trials))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_chunk, config, r) for r in _chunks(config.trials, workers * 4)]
            reports = [rep for f in futures for rep in f.result()]
    reports.sort(key=lambda r: r.trial)
    return summarize(reports, config.digest, config.seed), reports


# -- traces -------------------------------------------------------------------


def _fused_leaf(record: TickRecord, fused: Sequence[str]) -> bool:
    return record.kind == "condition" and record.node_id.rsplit(":", 1)[-1] in fused


def trace_lines(config: RunConfig, trial: int = 0) -> tuple[list[dict[str, Any]], TrialReport]:
    """Tick records for one trial, each fused condition followed by its vote record."""
    records: list[TickRecord] = []
    report = run_trial(config, trial, trace=records.append)
    fused = FUSED_CONDITIONS[config.task]
    votes = iter(report.votes)
    lines = []
    for rec in records:
        lines.append(rec.as_dict())
        if _fused_leaf(rec, fused):
            vote = next(votes)
            lines.append({"trial": trial, "kind": "vote", **vote.as_dict()})
    return lines, report


def write_jsonl(lines: Iterable[dict[str, Any]], fh: IO[str]) -> None:
    for line in lines:
        fh.write(json.dumps(line, sort_keys=True, separators=(",", ":")) + "\n")
