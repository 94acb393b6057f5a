"""Core entities shared by every part of the simulator: task and device types,
the task lifecycle graph, and the closed-form state-feature equations."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Deque, Dict, Optional, Set, Tuple

# Task sizes are in million instructions (MI); device ratings in the hardware
# table are GIPS, stored internally as MI/s. 1 GIPS = 1000 MI/s.
MI_PER_SECOND_PER_GIPS = 1000.0

MS_PER_HOUR = 3_600_000.0
MS_PER_MINUTE = 60_000.0


class SimulationError(Exception):
    """Base class for simulator errors."""


class InvalidDeviceError(SimulationError):
    """Device cannot serve the requested role (e.g. a sensor as an executor)."""


class IllegalTransitionError(SimulationError):
    """Attempted task status transition not allowed by the lifecycle graph."""


class UnreachableError(SimulationError):
    """Network link not available to the sender (main-network partition)."""


class TaskType(IntEnum):
    """Task urgency classes, ordered by priority: HRT > SRT > NRT."""

    HRT = 0
    SRT = 1
    NRT = 2


class FailureReason(Enum):
    DEADLINE_MISSED = "deadline"
    MOBILITY = "mobility"
    INCOMPATIBLE = "incompatible"
    NO_RESOURCES = "no_resources"
    DEAD_DEVICE = "dead_device"


class TaskStatus(Enum):
    PENDING = "pending"        # routed or in transfer, not yet queued
    QUEUED = "queued"
    EXECUTING = "executing"    # on a core, or finished and result in flight
    PAUSED = "paused"          # preempted, about to re-enter its queue
    SUCCEEDED = "succeeded"
    FAILED = "failed"
    REALLOCATED = "reallocated"  # transient: attempt failed, re-routing


# Legal lifecycle moves. SUCCEEDED and FAILED are terminal.
_ALLOWED_TRANSITIONS: Dict[TaskStatus, Tuple[TaskStatus, ...]] = {
    TaskStatus.PENDING: (TaskStatus.QUEUED, TaskStatus.FAILED, TaskStatus.REALLOCATED),
    TaskStatus.QUEUED: (TaskStatus.EXECUTING, TaskStatus.FAILED, TaskStatus.REALLOCATED),
    TaskStatus.EXECUTING: (
        TaskStatus.SUCCEEDED,
        TaskStatus.FAILED,
        TaskStatus.PAUSED,
        TaskStatus.REALLOCATED,
    ),
    TaskStatus.PAUSED: (TaskStatus.QUEUED,),
    TaskStatus.REALLOCATED: (TaskStatus.PENDING,),
    TaskStatus.SUCCEEDED: (),
    TaskStatus.FAILED: (),
}


def is_legal_transition(current: TaskStatus, new: TaskStatus) -> bool:
    return new in _ALLOWED_TRANSITIONS[current]


class DeviceKind(Enum):
    LAPTOP = "laptop"
    SMARTPHONE = "smartphone"
    GATEWAY = "gateway"
    STATIONARY_SENSOR = "stationary_sensor"
    MOBILE_SENSOR = "mobile_sensor"
    EDGE_SERVER = "edge_server"


@dataclass(frozen=True)
class DeviceSpec:
    """Hardware profile of one device kind."""

    kind: DeviceKind
    generates_tasks: bool
    mobile: bool
    speed: float                 # m/s
    battery_powered: bool
    battery_capacity_wh: float   # 0 when mains-powered
    idle_power_w: float
    max_power_w: float
    cpu_rate: float              # MI/s; 0 for sensors
    cpu_cores: int

    def __post_init__(self) -> None:
        if self.battery_powered != (self.battery_capacity_wh > 0):
            raise InvalidDeviceError(
                f"{self.kind.value}: battery capacity must be positive iff battery powered"
            )
        computing = self.kind in (
            DeviceKind.LAPTOP,
            DeviceKind.SMARTPHONE,
            DeviceKind.GATEWAY,
            DeviceKind.EDGE_SERVER,
        )
        if computing and self.cpu_rate <= 0:
            raise InvalidDeviceError(f"{self.kind.value}: computing kind needs cpu_rate > 0")
        if not computing and self.cpu_rate != 0:
            raise InvalidDeviceError(f"{self.kind.value}: sensor kind must have cpu_rate = 0")

    @property
    def is_computing(self) -> bool:
        return self.cpu_rate > 0


def standard_device_specs(
    mobile_sensor_battery_wh: float = 10.0,
    mobile_sensor_power_w: float = 0.1,
) -> Dict[DeviceKind, DeviceSpec]:
    """Hardware profiles for the five edge-device kinds.

    The mobile-sensor battery and draw are not fixed by the hardware table and
    stay configurable; the rest is fixed.
    """
    return {
        DeviceKind.LAPTOP: DeviceSpec(
            kind=DeviceKind.LAPTOP,
            generates_tasks=False,
            mobile=False,
            speed=0.0,
            battery_powered=True,
            battery_capacity_wh=56.2,
            idle_power_w=1.7,
            max_power_w=23.6,
            cpu_rate=110 * MI_PER_SECOND_PER_GIPS,
            cpu_cores=8,
        ),
        DeviceKind.SMARTPHONE: DeviceSpec(
            kind=DeviceKind.SMARTPHONE,
            generates_tasks=True,
            mobile=True,
            speed=1.4,
            battery_powered=True,
            battery_capacity_wh=18.75,
            idle_power_w=0.2,
            max_power_w=5.0,
            cpu_rate=25 * MI_PER_SECOND_PER_GIPS,
            cpu_cores=8,
        ),
        DeviceKind.GATEWAY: DeviceSpec(
            kind=DeviceKind.GATEWAY,
            generates_tasks=False,
            mobile=False,
            speed=0.0,
            battery_powered=False,
            battery_capacity_wh=0.0,
            idle_power_w=3.8,
            max_power_w=5.5,
            cpu_rate=16 * MI_PER_SECOND_PER_GIPS,
            cpu_cores=4,
        ),
        DeviceKind.STATIONARY_SENSOR: DeviceSpec(
            kind=DeviceKind.STATIONARY_SENSOR,
            generates_tasks=True,
            mobile=False,
            speed=0.0,
            battery_powered=False,
            battery_capacity_wh=0.0,
            idle_power_w=0.0,
            max_power_w=0.0,
            cpu_rate=0.0,
            cpu_cores=0,
        ),
        DeviceKind.MOBILE_SENSOR: DeviceSpec(
            kind=DeviceKind.MOBILE_SENSOR,
            generates_tasks=True,
            mobile=True,
            speed=1.4,
            battery_powered=True,
            battery_capacity_wh=mobile_sensor_battery_wh,
            idle_power_w=mobile_sensor_power_w,
            max_power_w=mobile_sensor_power_w,
            cpu_rate=0.0,
            cpu_cores=0,
        ),
    }


def edge_server_spec(total_gips: float = 400.0, cores: int = 16) -> DeviceSpec:
    """The second-tier server: mains powered, stationary, large core pool."""
    return DeviceSpec(
        kind=DeviceKind.EDGE_SERVER,
        generates_tasks=False,
        mobile=False,
        speed=0.0,
        battery_powered=False,
        battery_capacity_wh=0.0,
        idle_power_w=0.0,
        max_power_w=0.0,
        cpu_rate=total_gips * MI_PER_SECOND_PER_GIPS,
        cpu_cores=cores,
    )


@dataclass
class Task:
    """One offloadable unit of work and its accumulated delay components."""

    id: int
    type: TaskType
    size_mi: float
    latency_budget_ms: float
    generated_at: float          # sim-time ms
    generator_id: str
    generator_mobile: bool
    required_tag: int
    status: TaskStatus = TaskStatus.PENDING
    assigned_to: Optional[str] = None
    failure: Optional[FailureReason] = None

    # Delay decomposition; their sum equals total delay at a terminal state.
    network_time: float = 0.0
    waiting_time: float = 0.0
    execution_time: float = 0.0

    # Engine bookkeeping.
    leg_started_at: Optional[float] = None   # current transfer leg, if any
    enqueued_at: Optional[float] = None
    exec_started_at: Optional[float] = None
    remaining_service_ms: Optional[float] = None
    exec_token: int = 0                      # invalidates stale completion events
    realloc_count: int = 0
    pause_count: int = 0

    # Mechanism attribution flags.
    via_fallback: bool = False
    jumped_queue: bool = False
    preempted_other: bool = False

    # Learning bookkeeping: fuzzy state observed for the chosen executor.
    decision_state: Optional[tuple] = None

    def __post_init__(self) -> None:
        if self.size_mi <= 0:
            raise ValueError("task size must be positive")
        if self.latency_budget_ms <= 0:
            raise ValueError("latency budget must be positive")

    def set_status(self, new: TaskStatus) -> None:
        if not is_legal_transition(self.status, new):
            raise IllegalTransitionError(f"task {self.id}: {self.status.value} -> {new.value}")
        self.status = new

    @property
    def total_delay(self) -> float:
        return self.network_time + self.waiting_time + self.execution_time

    @property
    def terminal(self) -> bool:
        return self.status in (TaskStatus.SUCCEEDED, TaskStatus.FAILED)


@dataclass
class DeviceState:
    """A simulated edge node: spec, position, battery, queues, reachability."""

    id: str
    spec: DeviceSpec
    x: float = 0.0
    y: float = 0.0
    waypoint: Optional[Tuple[float, float]] = None
    battery_wh: float = 0.0
    present: bool = True
    blacklisted: bool = False
    dead: bool = False
    partitioned: bool = False    # cut from the main network (emergency)
    tags: Set[int] = field(default_factory=set)
    # One waiting lane per priority class; plain FIFO disciplines use lane 0.
    queues: Tuple[Deque[Task], Deque[Task], Deque[Task]] = field(
        default_factory=lambda: (deque(), deque(), deque())
    )
    executing: Dict[int, Task] = field(default_factory=dict)  # task id -> task

    @property
    def queue_length(self) -> int:
        return len(self.queues[0]) + len(self.queues[1]) + len(self.queues[2])

    @property
    def busy_cores(self) -> int:
        return len(self.executing)

    @property
    def free_cores(self) -> int:
        return self.spec.cpu_cores - len(self.executing)

    @property
    def battery_fraction(self) -> Optional[float]:
        """Remaining charge in [0, 1], or None for mains-powered devices."""
        if not self.spec.battery_powered:
            return None
        return self.battery_wh / self.spec.battery_capacity_wh

    def is_candidate(self) -> bool:
        """Eligible to receive new offloads right now."""
        return (
            self.spec.is_computing
            and self.spec.kind is not DeviceKind.EDGE_SERVER
            and self.present
            and not self.dead
            and not self.blacklisted
        )


def current_load(queue_length: int, cpu_cores: int) -> float:
    """Load on a device: tasks waiting for execution per CPU core."""
    if cpu_cores < 1:
        raise InvalidDeviceError("load is undefined for a device without CPU cores")
    if queue_length < 0:
        raise ValueError("queue length cannot be negative")
    return queue_length / cpu_cores


def expected_execution_time(task_size_mi: float, device_rate_mi_s: float) -> float:
    """Expected service time in seconds: task size divided by device rate."""
    if device_rate_mi_s <= 0:
        raise InvalidDeviceError("expected execution time is undefined for non-computing devices")
    if task_size_mi <= 0:
        raise ValueError("task size must be positive")
    return task_size_mi / device_rate_mi_s


def is_deadline_met(completed_at: float, generated_at: float, latency_budget_ms: float) -> bool:
    """Completion exactly at the budget counts as met."""
    if completed_at < generated_at:
        raise ValueError("completion cannot precede generation")
    return completed_at - generated_at <= latency_budget_ms
