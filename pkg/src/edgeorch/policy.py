"""Orchestration policies: the plain learned baseline and the robust layer
adding server fallback, class priority with preemption, and reallocation."""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, List, Optional, Tuple

from .domain import DeviceState, FailureReason, Task, TaskType

POLICY_BASELINE = "adworch"
POLICY_ROBUST = "r-adworch"

# Reallocation chains are bounded so every task terminates.
REALLOC_CAP = 3


class ReallocReason(Enum):
    MOBILITY = "mobility"
    INCOMPATIBLE = "incompatible"
    INSUFFICIENT_POWER = "power"


# Failure reasons that entitle a soft-real-time task to a server retry.
# A dead executor is the limiting case of insufficient power, so its retries
# are tallied under the power reason.
_SRT_RETRY_REASONS = {
    FailureReason.MOBILITY: ReallocReason.MOBILITY,
    FailureReason.INCOMPATIBLE: ReallocReason.INCOMPATIBLE,
    FailureReason.DEAD_DEVICE: ReallocReason.INSUFFICIENT_POWER,
}


@dataclass(frozen=True)
class ReallocationRecord:
    task_id: int
    from_device: Optional[str]
    to_device: Optional[str]     # None when re-routing found no destination
    reason: ReallocReason


@dataclass(frozen=True)
class PolicyFlags:
    """Feature switches distinguishing the two policies and their ablations."""

    name: str
    priority_queueing: bool
    preemption: bool
    server_fallback: bool
    srt_reallocation: bool
    battery_reallocation: bool
    shaped_rewards: bool


def baseline_policy() -> PolicyFlags:
    return PolicyFlags(
        name=POLICY_BASELINE,
        priority_queueing=False,
        preemption=False,
        server_fallback=False,
        srt_reallocation=False,
        battery_reallocation=False,
        shaped_rewards=False,
    )


def robust_policy() -> PolicyFlags:
    return PolicyFlags(
        name=POLICY_ROBUST,
        priority_queueing=True,
        preemption=True,
        server_fallback=True,
        srt_reallocation=True,
        battery_reallocation=True,
        shaped_rewards=True,
    )


# Ablatable mechanism groups for the contribution breakdown.
ABLATABLE = ("priority", "reallocation", "fallback", "shaping")


def ablated_policy(mechanisms: Iterable[str]) -> PolicyFlags:
    """The robust policy with the named mechanism groups switched off."""
    flags = robust_policy()
    for mech in mechanisms:
        if mech == "priority":
            flags = replace(flags, priority_queueing=False, preemption=False)
        elif mech == "reallocation":
            flags = replace(flags, srt_reallocation=False, battery_reallocation=False)
        elif mech == "fallback":
            flags = replace(flags, server_fallback=False)
        elif mech == "shaping":
            flags = replace(flags, shaped_rewards=False)
        else:
            raise ValueError(f"unknown mechanism {mech!r}; expected one of {ABLATABLE}")
    names = "~".join(sorted(set(mechanisms)))
    return replace(flags, name=f"{POLICY_ROBUST}~{names}" if names else POLICY_ROBUST)


class Route(Enum):
    OFFLOAD = "offload"
    SERVER = "server"
    FAIL = "fail"


@dataclass(frozen=True)
class RoutingDecision:
    route: Route
    device_id: Optional[str] = None


def route_task(
    task: Task,
    selected: Optional[DeviceState],
    server_reachable: bool,
    flags: PolicyFlags,
) -> RoutingDecision:
    """Destination for a pending task given the orchestrator's pick.

    No pick and a reachable server sends real-time classes to the server;
    non-real-time tasks never fall back and fail on the spot.
    """
    if selected is not None:
        return RoutingDecision(Route.OFFLOAD, selected.id)
    if (
        flags.server_fallback
        and task.type in (TaskType.HRT, TaskType.SRT)
        and server_reachable
    ):
        return RoutingDecision(Route.SERVER)
    return RoutingDecision(Route.FAIL)


def queue_class(task_type: TaskType, priority_queueing: bool) -> int:
    """Waiting-lane index: class lanes under priority queueing, lane 0 otherwise."""
    return int(task_type) if priority_queueing else 0


def enqueue_with_priority(device: DeviceState, task: Task, flags: PolicyFlags) -> bool:
    """Append the task to its waiting lane; returns True when it bypassed at
    least one waiting lower-class task."""
    lane = queue_class(task.type, flags.priority_queueing)
    device.queues[lane].append(task)
    if not flags.priority_queueing or task.type is not TaskType.HRT:
        return False
    return len(device.queues[1]) > 0 or len(device.queues[2]) > 0


def requeue_paused(device: DeviceState, task: Task, flags: PolicyFlags) -> None:
    """A preempted task re-enters at the head of its own lane."""
    lane = queue_class(task.type, flags.priority_queueing)
    device.queues[lane].appendleft(task)


def pop_next(device: DeviceState) -> Optional[Task]:
    """Next task to start: highest-priority lane first, FIFO within a lane."""
    for lane in device.queues:
        if lane:
            return lane.popleft()
    return None


def pick_preemption_victim(device: DeviceState, now: float) -> Optional[Task]:
    """Executing non-real-time task with the most service left, if any."""
    victim: Optional[Task] = None
    victim_left = -1.0
    for task in device.executing.values():
        if task.type is not TaskType.NRT:
            continue
        left = (task.remaining_service_ms or 0.0) - (now - (task.exec_started_at or now))
        if left > victim_left or (left == victim_left and victim and task.id < victim.id):
            victim = task
            victim_left = left
    return victim


def pull_for_low_battery(device: DeviceState) -> List[Task]:
    """Queued non-HRT tasks to reallocate when the battery threshold is crossed.

    Executing tasks and queued HRT stay; pulled tasks are removed from their
    lanes in queue order.
    """
    pulled: List[Task] = []
    for lane in device.queues:
        keep = [t for t in lane if t.type is TaskType.HRT]
        for t in lane:
            if t.type is not TaskType.HRT:
                pulled.append(t)
        lane.clear()
        lane.extend(keep)
    return pulled


def on_task_failed(
    task: Task,
    reason: FailureReason,
    server_reachable: bool,
    flags: PolicyFlags,
) -> Optional[ReallocReason]:
    """Server-retry decision after a failed attempt; None means final failure.

    Only soft-real-time tasks that failed for a reason other than latency are
    retried, and only while the server is reachable and the retry cap holds.
    """
    if not flags.srt_reallocation:
        return None
    if task.type is not TaskType.SRT:
        return None
    if reason not in _SRT_RETRY_REASONS:
        return None
    if not server_reachable:
        return None
    if task.realloc_count >= REALLOC_CAP:
        return None
    return _SRT_RETRY_REASONS[reason]


def resolve_policy(name: str, ablate: Iterable[str] = ()) -> PolicyFlags:
    """Policy flags from a CLI policy name plus optional ablations."""
    ablate = tuple(ablate)
    if name == POLICY_BASELINE:
        if ablate:
            raise ValueError("ablation applies to the robust policy only")
        return baseline_policy()
    if name == POLICY_ROBUST:
        return ablated_policy(ablate) if ablate else robust_policy()
    raise ValueError(f"unknown policy {name!r}; expected {POLICY_BASELINE} or {POLICY_ROBUST}")
