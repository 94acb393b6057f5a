"""Learned orchestration core: state observation, fuzzification, Q-table
updates from task results, reliability classification, and device selection."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

from .domain import (
    DeviceState,
    InvalidDeviceError,
    Task,
    TaskType,
    current_load,
    expected_execution_time,
)

# Actions scored per candidate resource.
ASSIGN = 1
REJECT = 0

# Penalty weights per task class when reward shaping is on; the plain
# orchestrator weighs every class at 1.
SHAPED_PENALTY_WEIGHTS: Dict[TaskType, float] = {
    TaskType.HRT: 3.0,
    TaskType.SRT: 1.5,
    TaskType.NRT: 1.0,
}

# Membership anchors per numeric feature: (low peak, medium peak, high peak).
LOAD_ANCHORS = (0.0, 1.0, 2.0)          # waiting tasks per core
EXEC_RATIO_ANCHORS = (0.0, 0.5, 1.0)    # expected execution time / latency budget
BATTERY_ANCHORS = (0.2, 0.5, 1.0)       # remaining charge fraction

LEVEL_MAINS = 3  # battery level sentinel for mains-powered resources


@dataclass(frozen=True)
class Observation:
    """Crisp decision state: task attributes plus one candidate's characteristics."""

    task_latency_ms: float
    task_size_mi: float
    task_mobile: bool
    task_type: TaskType
    resource_load: float            # waiting tasks per core
    resource_exec_s: float          # expected service time, seconds
    resource_mobile: bool
    resource_battery: Optional[float]  # fraction in [0, 1]; None = mains


# Discretized state: (task type, task mobile, load level, exec-ratio level,
# battery level, resource mobile). At most 3*2*3*3*4*2 = 432 states.
FuzzyObservation = Tuple[int, int, int, int, int, int]


def build_observation(task: Task, device: DeviceState) -> Observation:
    """Snapshot the live decision state for one (task, candidate) pair."""
    if not device.spec.is_computing:
        raise InvalidDeviceError(f"{device.id} is not a computing device")
    if not device.present:
        raise InvalidDeviceError(f"{device.id} is outside the area")
    return Observation(
        task_latency_ms=task.latency_budget_ms,
        task_size_mi=task.size_mi,
        task_mobile=task.generator_mobile,
        task_type=task.type,
        resource_load=current_load(device.queue_length, device.spec.cpu_cores),
        resource_exec_s=expected_execution_time(task.size_mi, device.spec.cpu_rate),
        resource_mobile=device.spec.mobile,
        resource_battery=device.battery_fraction,
    )


def membership_level(value: float, anchors: Tuple[float, float, float]) -> int:
    """Index of the max-membership triangular level; ties go to the lower level."""
    low, mid, high = anchors
    if value <= low:
        return 0
    if value >= high:
        return 2
    if value <= mid:
        m_low = (mid - value) / (mid - low)
        m_mid = (value - low) / (mid - low)
        return 0 if m_low >= m_mid else 1
    m_mid = (high - value) / (high - mid)
    m_high = (value - mid) / (high - mid)
    return 1 if m_mid >= m_high else 2


def fuzzify(obs: Observation) -> FuzzyObservation:
    """Map a crisp observation to its discrete state, totally and deterministically."""
    ratio = (obs.resource_exec_s * 1000.0) / obs.task_latency_ms
    if obs.resource_battery is None:
        battery_level = LEVEL_MAINS
    else:
        battery_level = membership_level(obs.resource_battery, BATTERY_ANCHORS)
    return (
        int(obs.task_type),
        int(obs.task_mobile),
        membership_level(obs.resource_load, LOAD_ANCHORS),
        membership_level(ratio, EXEC_RATIO_ANCHORS),
        battery_level,
        int(obs.resource_mobile),
    )


def reward(
    result_success: bool,
    task_type: TaskType,
    delay_ms: float,
    latency_budget_ms: float,
    shaped: bool = True,
) -> float:
    """Immediate reward for a returned result: success indicator minus the
    weighted delay penalty (delay over budget)."""
    if latency_budget_ms <= 0:
        raise ValueError("latency budget must be positive")
    if delay_ms < 0:
        raise ValueError("delay cannot be negative")
    base = 1.0 if result_success else 0.0
    weight = SHAPED_PENALTY_WEIGHTS[task_type] if shaped else 1.0
    return base - weight * (delay_ms / latency_budget_ms)


class QTable:
    """Tabular value store over (fuzzy state, action); missing entries read (0, 0)."""

    def __init__(self) -> None:
        self._entries: Dict[Tuple[FuzzyObservation, int], List[float]] = {}

    def value(self, state: FuzzyObservation, action: int) -> float:
        entry = self._entries.get((state, action))
        return entry[0] if entry else 0.0

    def visits(self, state: FuzzyObservation, action: int) -> int:
        entry = self._entries.get((state, action))
        return int(entry[1]) if entry else 0

    def update(self, state: FuzzyObservation, action: int, r: float, alpha: float) -> float:
        """Move the stored value toward r by a factor alpha; returns the new value."""
        key = (state, action)
        entry = self._entries.get(key)
        if entry is None:
            entry = [0.0, 0]
            self._entries[key] = entry
        entry[0] += alpha * (r - entry[0])
        entry[1] += 1
        return entry[0]

    def __len__(self) -> int:
        return len(self._entries)

    def export_text(self) -> str:
        """Flat table dump, one entry per line, suitable for warm starts."""
        lines = ["# type mobile load ratio battery res_mobile action q visits"]
        for (state, action), (q, visits) in sorted(self._entries.items()):
            fields = [str(v) for v in state] + [str(action), repr(q), str(int(visits))]
            lines.append("\t".join(fields))
        return "\n".join(lines) + "\n"

    @classmethod
    def import_text(cls, text: str) -> "QTable":
        table = cls()
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 9:
                raise ValueError(f"malformed qtable line: {line!r}")
            state = tuple(int(v) for v in parts[:6])
            action = int(parts[6])
            table._entries[(state, action)] = [float(parts[7]), int(parts[8])]
        return table


def classify_reliability(
    table: QTable,
    state: FuzzyObservation,
    threshold: float = -1.0,
    warmup_visits: int = 1,
) -> Tuple[bool, float]:
    """Reliable when the learned value clears the threshold, or while the
    state has not yet been visited enough times (optimistic start)."""
    score = table.value(state, ASSIGN)
    if table.visits(state, ASSIGN) < warmup_visits:
        return True, score
    return score >= threshold, score


def select_device(
    task: Task,
    candidates: Iterable[DeviceState],
    table: QTable,
    rng: random.Random,
    epsilon: float,
    threshold: float = -1.0,
    warmup_visits: int = 1,
) -> Optional[Tuple[DeviceState, FuzzyObservation]]:
    """Pick a destination among reliable candidates: explore uniformly with
    probability epsilon, otherwise take the best score (ties: fastest expected
    service, then lowest device id). Returns None when nothing is reliable.

    Candidates must already exclude blacklisted, dead, absent, and
    non-computing devices, and be ordered by device id.
    """
    reliable: List[Tuple[DeviceState, FuzzyObservation, float, float]] = []
    for device in candidates:
        obs = build_observation(task, device)
        state = fuzzify(obs)
        ok, score = classify_reliability(table, state, threshold, warmup_visits)
        if ok:
            reliable.append((device, state, score, obs.resource_exec_s))
    if not reliable:
        return None
    if epsilon > 0.0 and rng.random() < epsilon:
        device, state, _, _ = reliable[rng.randrange(len(reliable))]
        return device, state
    best = reliable[0]
    for entry in reliable[1:]:
        if entry[2] > best[2] or (entry[2] == best[2] and entry[3] < best[3]):
            best = entry
    return best[0], best[1]
