"""Per-run metric collection and cross-seed aggregation."""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

from .domain import FailureReason, Task, TaskType
from .policy import ReallocReason

CSV_HEADER = (
    "scenario,policy,seed,task_type,generated,succeeded,failed_deadline,"
    "failed_mobility,failed_incompatible,failed_no_resources,failed_dead_device,"
    "realloc_mobility,realloc_incompatible,realloc_power,avg_delay_ms,success_rate"
)

# How a success came about; every success carries exactly one tag.
TAG_BASELINE = "baseline"
TAG_PRIORITY = "priority"
TAG_REALLOCATION = "reallocation"
TAG_FALLBACK = "edge_server_fallback"
TAG_SHAPING = "delay_penalty_shaping"

ATTRIBUTION_TAGS = (TAG_BASELINE, TAG_PRIORITY, TAG_REALLOCATION, TAG_FALLBACK, TAG_SHAPING)


class MetricUndefinedError(ValueError):
    """Requested a rate or delay for a task type with nothing generated."""


def attribute_success(task: Task) -> str:
    """Mechanism tag for one succeeded task.

    Server fallback wins over reallocation, which wins over priority effects;
    anything else is the plain path. The shaping tag is only assigned by the
    counterfactual comparison mode, never here.
    """
    if task.via_fallback:
        return TAG_FALLBACK
    if task.realloc_count > 0:
        return TAG_REALLOCATION
    if task.type is TaskType.HRT and (task.jumped_queue or task.preempted_other):
        return TAG_PRIORITY
    return TAG_BASELINE


def _per_type(value=int) -> Dict[TaskType, int]:
    return {t: value() for t in TaskType}


@dataclass
class RunMetrics:
    """Counters for one (scenario, policy, seed) run."""

    scenario: str
    policy: str
    seed: int

    generated: Dict[TaskType, int] = field(default_factory=_per_type)
    succeeded: Dict[TaskType, int] = field(default_factory=_per_type)
    failed: Dict[TaskType, Dict[FailureReason, int]] = field(
        default_factory=lambda: {t: {r: 0 for r in FailureReason} for t in TaskType}
    )
    network_time: Dict[TaskType, float] = field(default_factory=lambda: _per_type(float))
    waiting_time: Dict[TaskType, float] = field(default_factory=lambda: _per_type(float))
    execution_time: Dict[TaskType, float] = field(default_factory=lambda: _per_type(float))
    reallocations: Dict[ReallocReason, int] = field(
        default_factory=lambda: {r: 0 for r in ReallocReason}
    )
    attribution: Dict[str, int] = field(
        default_factory=lambda: {tag: 0 for tag in ATTRIBUTION_TAGS}
    )
    # Engine-side counters useful for diagnostics and property checks.
    counters: Dict[str, int] = field(default_factory=dict)

    def bump(self, key: str, amount: int = 1) -> None:
        self.counters[key] = self.counters.get(key, 0) + amount

    def record_terminal(self, task: Task) -> None:
        """Fold a naturally or administratively terminal task into the sums."""
        t = task.type
        self.network_time[t] += task.network_time
        self.waiting_time[t] += task.waiting_time
        self.execution_time[t] += task.execution_time
        if task.status.value == "succeeded":
            self.succeeded[t] += 1
            self.attribution[attribute_success(task)] += 1
        else:
            assert task.failure is not None
            self.failed[t][task.failure] += 1

    def drop_phantom(self, task: Task) -> None:
        """Remove an unresolved in-flight task from the generated pool."""
        self.generated[task.type] -= 1

    def failed_total(self, t: TaskType) -> int:
        return sum(self.failed[t].values())

    def success_rate(self, t: TaskType) -> float:
        if self.generated[t] <= 0:
            raise MetricUndefinedError(f"no {t.name} tasks generated")
        return self.succeeded[t] / self.generated[t]

    def average_delay(self, t: TaskType) -> float:
        """Mean of the three delay components over generated (not succeeded) tasks."""
        if self.generated[t] <= 0:
            raise MetricUndefinedError(f"no {t.name} tasks generated")
        total = self.network_time[t] + self.waiting_time[t] + self.execution_time[t]
        return total / self.generated[t]

    def conservation_holds(self) -> bool:
        return all(
            self.generated[t] == self.succeeded[t] + self.failed_total(t) for t in TaskType
        )

    def csv_rows(self) -> List[str]:
        rows = []
        for t in TaskType:
            gen = self.generated[t]
            try:
                delay = repr(self.average_delay(t))
                rate = repr(self.success_rate(t))
            except MetricUndefinedError:
                delay = ""
                rate = ""
            rows.append(
                ",".join(
                    str(v)
                    for v in (
                        self.scenario,
                        self.policy,
                        self.seed,
                        t.name,
                        gen,
                        self.succeeded[t],
                        self.failed[t][FailureReason.DEADLINE_MISSED],
                        self.failed[t][FailureReason.MOBILITY],
                        self.failed[t][FailureReason.INCOMPATIBLE],
                        self.failed[t][FailureReason.NO_RESOURCES],
                        self.failed[t][FailureReason.DEAD_DEVICE],
                        self.reallocations[ReallocReason.MOBILITY],
                        self.reallocations[ReallocReason.INCOMPATIBLE],
                        self.reallocations[ReallocReason.INSUFFICIENT_POWER],
                        delay,
                        rate,
                    )
                )
            )
        return rows


def render_csv(runs: Iterable[RunMetrics]) -> str:
    lines = [CSV_HEADER]
    for run in runs:
        lines.extend(run.csv_rows())
    return "\n".join(lines) + "\n"


def _stats(values: List[float]) -> Dict[str, float]:
    return {
        "mean": statistics.fmean(values),
        "stdev": statistics.stdev(values) if len(values) > 1 else 0.0,
        "min": min(values),
        "max": max(values),
    }


def aggregate(runs: List[RunMetrics]) -> Dict:
    """Mean, sample stdev, min, max of the headline metrics across runs."""
    if not runs:
        raise ValueError("nothing to aggregate")
    groups: Dict[str, List[RunMetrics]] = {}
    for run in runs:
        groups.setdefault(run.policy, []).append(run)
    summary: Dict = {"scenario": runs[0].scenario, "policies": {}}
    for policy, group in sorted(groups.items()):
        per_type: Dict[str, Dict] = {}
        for t in TaskType:
            rates: List[float] = []
            delays: List[float] = []
            for run in group:
                try:
                    rates.append(run.success_rate(t))
                    delays.append(run.average_delay(t))
                except MetricUndefinedError:
                    continue
            if rates:
                per_type[t.name] = {
                    "success_rate": _stats(rates),
                    "avg_delay_ms": _stats(delays),
                }
        attribution: Dict[str, int] = {tag: 0 for tag in ATTRIBUTION_TAGS}
        reallocs: Dict[str, int] = {r.value: 0 for r in ReallocReason}
        for run in group:
            for tag in ATTRIBUTION_TAGS:
                attribution[tag] += run.attribution[tag]
            for r in ReallocReason:
                reallocs[r.value] += run.reallocations[r]
        summary["policies"][policy] = {
            "runs": len(group),
            "seeds": sorted(run.seed for run in group),
            "task_types": per_type,
            "attribution": attribution,
            "reallocations": reallocs,
        }
    return summary


def render_summary_json(summary: Dict) -> str:
    return json.dumps(summary, indent=2, sort_keys=True) + "\n"
