"""Deterministic discrete-event kernel: clock, event queue, task generation,
mobility, two-tier network transfer, per-core execution with preemption, and
battery drain."""

from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Set, Tuple

from .config import EDGE_SERVER_ID, ScenarioConfig, build_population
from .domain import (
    DeviceState,
    FailureReason,
    MS_PER_HOUR,
    SimulationError,
    Task,
    TaskStatus,
    TaskType,
    UnreachableError,
    expected_execution_time,
    is_deadline_met,
)
from .metrics import RunMetrics
from .orchestrator import ASSIGN, QTable, reward, select_device
from .policy import (
    PolicyFlags,
    ReallocReason,
    Route,
    REALLOC_CAP,
    enqueue_with_priority,
    on_task_failed,
    pick_preemption_victim,
    pop_next,
    pull_for_low_battery,
    queue_class,
    requeue_paused,
    route_task,
)

TraceSink = Callable[[dict], None]


class EventKind(Enum):
    TASK_GENERATED = "TaskGenerated"
    TRANSFER_COMPLETE = "TransferComplete"
    EXECUTION_COMPLETE = "ExecutionComplete"
    DEVICE_MOVED = "DeviceMoved"
    BATTERY_TICK = "BatteryTick"
    DEVICE_DEPARTED = "DeviceDeparted"
    DEVICE_ARRIVED = "DeviceArrived"
    RESULT_RETURNED = "ResultReturned"


@dataclass
class Event:
    """Queued occurrence; dequeue order is (at, seq), fully deterministic."""

    at: float
    seq: int
    kind: EventKind
    task: Optional[Task] = None
    device: Optional[DeviceState] = None
    token: int = 0
    task_type: Optional[TaskType] = None

    def __lt__(self, other: "Event") -> bool:
        return (self.at, self.seq) < (other.at, other.seq)


@dataclass
class NetworkModel:
    """Two links: the local device network and the main (server) network."""

    internal_bandwidth_mbps: float = 100.0
    main_bandwidth_mbps: float = 50.0
    internal_base_latency_ms: float = 2.0
    main_base_latency_ms: float = 10.0
    fluctuation: bool = True
    main_network_partition: Set[str] = field(default_factory=set)


@dataclass
class EnergyModel:
    threshold_fraction: float = 0.2
    tick_interval_ms: float = 1000.0

    def __post_init__(self) -> None:
        if not (0.0 < self.threshold_fraction < 1.0):
            raise ValueError("threshold fraction must be in (0, 1)")


def transfer_time(
    payload_bytes: float,
    link: str,
    network: NetworkModel,
    rng: Optional[random.Random],
    sender_id: Optional[str] = None,
) -> float:
    """Transfer duration in ms: base latency plus payload over the effective
    bandwidth, where the bandwidth wobbles by a multiplier in [0.5, 1.5].

    A zero payload costs the base latency only. Senders cut from the main
    network cannot use it.
    """
    if payload_bytes < 0:
        raise ValueError("payload cannot be negative")
    if link == "main":
        if sender_id is not None and sender_id in network.main_network_partition:
            raise UnreachableError(f"{sender_id} is cut from the main network")
        base = network.main_base_latency_ms
        bandwidth = network.main_bandwidth_mbps
    elif link == "internal":
        base = network.internal_base_latency_ms
        bandwidth = network.internal_bandwidth_mbps
    else:
        raise ValueError(f"unknown link {link!r}")
    factor = rng.uniform(0.5, 1.5) if (network.fluctuation and rng is not None) else 1.0
    # bytes * 8 bits / (Mbps * 1e6 bit/s) seconds -> ms
    return base + payload_bytes * 8.0 / (bandwidth * 1000.0 * factor)


def step_mobility(
    device: DeviceState,
    dt_ms: float,
    area: Tuple[float, float],
    rng: random.Random,
    departure_prob: float = 0.0,
    arrival_prob: float = 0.0,
) -> Optional[str]:
    """Advance one mobile device by one tick of random-waypoint movement.

    Present devices move toward their waypoint at spec speed and may depart;
    absent ones may re-enter at a fresh position. Returns "departed",
    "arrived", or None. Stationary devices are untouched.
    """
    if not device.spec.mobile:
        return None
    width, height = area
    if device.present:
        step = device.spec.speed * dt_ms / 1000.0
        if device.waypoint is None:
            device.waypoint = (rng.uniform(0.0, width), rng.uniform(0.0, height))
        dx = device.waypoint[0] - device.x
        dy = device.waypoint[1] - device.y
        dist = (dx * dx + dy * dy) ** 0.5
        if dist <= step:
            device.x, device.y = device.waypoint
            device.waypoint = (rng.uniform(0.0, width), rng.uniform(0.0, height))
        else:
            device.x += dx / dist * step
            device.y += dy / dist * step
        if departure_prob > 0.0 and rng.random() < departure_prob:
            device.present = False
            return "departed"
        return None
    if arrival_prob > 0.0 and rng.random() < arrival_prob:
        device.present = True
        device.x = rng.uniform(0.0, width)
        device.y = rng.uniform(0.0, height)
        device.waypoint = (rng.uniform(0.0, width), rng.uniform(0.0, height))
        return "arrived"
    return None


def drain_battery(device: DeviceState, dt_ms: float) -> float:
    """Drain one tick of energy: idle draw plus the busy-core share of the
    idle-to-max band. Returns the consumed energy in Wh; clamps at empty."""
    spec = device.spec
    if not spec.battery_powered:
        raise SimulationError(f"{device.id} is mains powered")
    if spec.cpu_cores > 0:
        busy_fraction = device.busy_cores / spec.cpu_cores
    else:
        busy_fraction = 0.0
    watts = spec.idle_power_w + (spec.max_power_w - spec.idle_power_w) * busy_fraction
    consumed = watts * dt_ms / MS_PER_HOUR
    device.battery_wh = max(0.0, device.battery_wh - consumed)
    return consumed


class Simulation:
    """One seeded run of a scenario under one policy."""

    def __init__(
        self,
        cfg: ScenarioConfig,
        flags: PolicyFlags,
        seed: int,
        trace_sink: Optional[TraceSink] = None,
        qtable: Optional[QTable] = None,
    ) -> None:
        self.cfg = cfg
        self.flags = flags
        self.seed = seed
        self.trace_sink = trace_sink
        self.horizon = cfg.duration_ms
        self.clock = 0.0
        self._seq = itertools.count()
        self._heap: List[Event] = []
        self._task_ids = itertools.count()

        master = random.Random(seed)
        self.rng_population = random.Random(master.getrandbits(64))
        self.rng_arrivals = random.Random(master.getrandbits(64))
        self.rng_mobility = random.Random(master.getrandbits(64))
        self.rng_network = random.Random(master.getrandbits(64))
        self.rng_select = random.Random(master.getrandbits(64))

        devices = build_population(cfg, self.rng_population)
        self.devices: Dict[str, DeviceState] = {d.id: d for d in devices}
        self.server = self.devices[EDGE_SERVER_ID]
        self.computing_ids = sorted(
            d.id for d in devices if d.spec.is_computing and d.id != EDGE_SERVER_ID
        )
        self.generator_ids = sorted(d.id for d in devices if d.spec.generates_tasks)
        self.mobile_ids = sorted(d.id for d in devices if d.spec.mobile)
        self.battery_ids = sorted(d.id for d in devices if d.spec.battery_powered)

        self.network = NetworkModel(
            internal_bandwidth_mbps=cfg.network.internal_bandwidth_mbps,
            main_bandwidth_mbps=cfg.network.main_bandwidth_mbps,
            internal_base_latency_ms=cfg.network.internal_latency_ms,
            main_base_latency_ms=cfg.network.main_latency_ms,
            fluctuation=cfg.network.fluctuation,
            main_network_partition={d.id for d in devices if d.partitioned},
        )
        self.energy = EnergyModel(
            threshold_fraction=cfg.energy.threshold_fraction,
            tick_interval_ms=cfg.energy.tick_ms,
        )

        self.qtable = qtable if qtable is not None else QTable()
        self.metrics = RunMetrics(scenario=cfg.name, policy=flags.name, seed=seed)
        self.live: Dict[int, Task] = {}

        # Per-(generator, type) arrival rates, tasks per minute.
        self._apps = {t: cfg.apps[t.name] for t in TaskType}
        n_gen = max(1, len(self.generator_ids))
        self._gen_rates: Dict[TaskType, float] = {}
        for t in TaskType:
            rate = cfg.arrival.rates_per_minute[t.name] * cfg.arrival.rate_scale
            if cfg.arrival.interpretation == "system_wide":
                rate /= n_gen
            self._gen_rates[t] = rate

    # ------------------------------------------------------------------
    # Event plumbing
    # ------------------------------------------------------------------

    def schedule(self, event: Event) -> None:
        if event.at < self.clock:
            raise SimulationError(
                f"cannot schedule {event.kind.value} at {event.at} before clock {self.clock}"
            )
        heapq.heappush(self._heap, event)

    def _make_event(self, at: float, kind: EventKind, **kw) -> Event:
        return Event(at=at, seq=next(self._seq), kind=kind, **kw)

    def _trace(self, ev: str, **fields) -> None:
        if self.trace_sink is not None:
            record = {"t": self.clock, "ev": ev}
            record.update(fields)
            self.trace_sink(record)

    def epsilon(self) -> float:
        frac = min(1.0, self.clock / self.horizon) if self.horizon > 0 else 1.0
        start = self.cfg.learning.epsilon_start
        end = self.cfg.learning.epsilon_end
        return start + (end - start) * frac

    # ------------------------------------------------------------------
    # Run loop
    # ------------------------------------------------------------------

    def run(self) -> RunMetrics:
        self._schedule_initial()
        heap = self._heap
        while heap and heap[0].at <= self.horizon:
            event = heapq.heappop(heap)
            if event.at < self.clock:
                raise SimulationError("event queue regressed in time")
            self.clock = event.at
            handler = self._HANDLERS[event.kind]
            handler(self, event)
        self.clock = self.horizon
        self._resolve_horizon()
        return self.metrics

    def _schedule_initial(self) -> None:
        for gid in self.generator_ids:
            device = self.devices[gid]
            for t in TaskType:
                if self._gen_rates[t] <= 0:
                    continue
                gap = self._arrival_gap(t)
                if gap <= self.horizon:
                    self.schedule(
                        self._make_event(gap, EventKind.TASK_GENERATED, device=device, task_type=t)
                    )
        if self.mobile_ids:
            self.schedule(self._make_event(self.cfg.mobility.tick_ms, EventKind.DEVICE_MOVED))
        if self.battery_ids:
            self.schedule(self._make_event(self.energy.tick_interval_ms, EventKind.BATTERY_TICK))

    def _arrival_gap(self, t: TaskType) -> float:
        mean_gap_ms = 60_000.0 / self._gen_rates[t]
        if self.cfg.arrival.process == "periodic":
            return mean_gap_ms
        return self.rng_arrivals.expovariate(1.0 / mean_gap_ms)

    # ------------------------------------------------------------------
    # Handlers
    # ------------------------------------------------------------------

    def _on_task_generated(self, event: Event) -> None:
        device = event.device
        t = event.task_type
        next_at = self.clock + self._arrival_gap(t)
        if next_at <= self.horizon:
            self.schedule(
                self._make_event(next_at, EventKind.TASK_GENERATED, device=device, task_type=t)
            )
        if not device.present or device.dead:
            return
        profile = self._apps[t]
        task = Task(
            id=next(self._task_ids),
            type=t,
            size_mi=profile["size_mi"],
            latency_budget_ms=profile["latency_ms"],
            generated_at=self.clock,
            generator_id=device.id,
            generator_mobile=device.spec.mobile,
            required_tag=self.rng_arrivals.randrange(self.cfg.compat.tag_universe),
        )
        self.live[task.id] = task
        self.metrics.generated[t] += 1
        self._trace("gen", task=task.id, type=t.name, dev=device.id)
        self._dispatch(task)

    def _candidates(self, task: Task) -> List[DeviceState]:
        generator = self.devices[task.generator_id]
        radius = self.cfg.mobility.reach_radius_m
        out = []
        for did in self.computing_ids:
            device = self.devices[did]
            if not device.is_candidate():
                continue
            if radius is not None:
                dx = device.x - generator.x
                dy = device.y - generator.y
                if dx * dx + dy * dy > radius * radius:
                    continue
            out.append(device)
        return out

    def _server_reachable(self, task: Task) -> bool:
        generator = self.devices[task.generator_id]
        return generator.present and not generator.dead and not generator.partitioned

    def _dispatch(
        self,
        task: Task,
        realloc_reason: Optional[ReallocReason] = None,
        from_device: Optional[str] = None,
    ) -> None:
        """Route a pending task: offload, fall back to the server, or fail."""
        candidates = self._candidates(task)
        selection = select_device(
            task,
            candidates,
            self.qtable,
            self.rng_select,
            self.epsilon(),
            self.cfg.learning.reliability_threshold,
            self.cfg.learning.warmup_visits,
        )
        server_ok = self._server_reachable(task)
        decision = route_task(
            task, selection[0] if selection else None, server_ok, self.flags
        )
        if realloc_reason is not None:
            dest = decision.device_id if decision.route is Route.OFFLOAD else (
                EDGE_SERVER_ID if decision.route is Route.SERVER else None
            )
            self._trace(
                "realloc",
                task=task.id,
                type=task.type.name,
                reason=realloc_reason.value,
                frm=from_device,
                to=dest,
            )
        self._trace(
            "route",
            task=task.id,
            type=task.type.name,
            decision=decision.route.value,
            dest=decision.device_id
            if decision.route is Route.OFFLOAD
            else (EDGE_SERVER_ID if decision.route is Route.SERVER else None),
            n_cands=len(candidates),
            selected=selection is not None,
            server_ok=server_ok,
        )
        if decision.route is Route.OFFLOAD:
            device = self.devices[decision.device_id]
            task.assigned_to = device.id
            task.decision_state = selection[1]
            if device.id == task.generator_id:
                self._arrive(task, device)
            else:
                payload = task.size_mi * self.cfg.network.task_bytes_per_mi
                duration = transfer_time(payload, "internal", self.network, self.rng_network)
                task.leg_started_at = self.clock
                self.schedule(
                    self._make_event(
                        self.clock + duration, EventKind.TRANSFER_COMPLETE, task=task, device=device
                    )
                )
        elif decision.route is Route.SERVER:
            task.assigned_to = EDGE_SERVER_ID
            task.via_fallback = True
            task.decision_state = None
            self._send_to_server(task)
        else:
            self._final_fail(task, FailureReason.NO_RESOURCES)

    def _send_to_server(self, task: Task) -> None:
        payload = task.size_mi * self.cfg.network.task_bytes_per_mi
        duration = transfer_time(
            payload, "main", self.network, self.rng_network, sender_id=task.generator_id
        )
        task.leg_started_at = self.clock
        self.schedule(
            self._make_event(
                self.clock + duration, EventKind.TRANSFER_COMPLETE, task=task, device=self.server
            )
        )

    def _on_transfer_complete(self, event: Event) -> None:
        task, device = event.task, event.device
        if task.leg_started_at is not None:
            task.network_time += self.clock - task.leg_started_at
            task.leg_started_at = None
        if device.dead:
            self._attempt_failed(task, FailureReason.DEAD_DEVICE, device)
            return
        if not device.present:
            self._attempt_failed(task, FailureReason.MOBILITY, device)
            return
        if device.id != EDGE_SERVER_ID and task.required_tag not in device.tags:
            self._attempt_failed(task, FailureReason.INCOMPATIBLE, device)
            return
        if (
            device.blacklisted
            and task.type is not TaskType.HRT
            and self.flags.battery_reallocation
            and task.realloc_count < REALLOC_CAP
        ):
            # Low-battery device declines the late arrival; it re-enters routing.
            self._begin_realloc(task, ReallocReason.INSUFFICIENT_POWER)
            self._dispatch(
                task,
                realloc_reason=ReallocReason.INSUFFICIENT_POWER,
                from_device=device.id,
            )
            return
        self._arrive(task, device)

    def _arrive(self, task: Task, device: DeviceState) -> None:
        task.set_status(TaskStatus.QUEUED)
        task.enqueued_at = self.clock
        jumped = enqueue_with_priority(device, task, self.flags)
        task.jumped_queue = task.jumped_queue or jumped
        self._trace("enqueue", task=task.id, type=task.type.name, dev=device.id, jumped=jumped)
        if (
            task.type is TaskType.HRT
            and self.flags.preemption
            and device.free_cores == 0
        ):
            victim = pick_preemption_victim(device, self.clock)
            if victim is not None:
                self._pause(victim, device)
                task.preempted_other = True
        self._start_ready(device)

    def _pause(self, victim: Task, device: DeviceState) -> None:
        elapsed = self.clock - victim.exec_started_at
        victim.remaining_service_ms = max(0.0, victim.remaining_service_ms - elapsed)
        victim.execution_time += elapsed
        victim.exec_started_at = None
        victim.exec_token += 1
        del device.executing[victim.id]
        victim.set_status(TaskStatus.PAUSED)
        victim.pause_count += 1
        victim.set_status(TaskStatus.QUEUED)
        victim.enqueued_at = self.clock
        requeue_paused(device, victim, self.flags)
        self.metrics.bump("pauses")
        self._trace("exec_pause", task=victim.id, type=victim.type.name, dev=device.id)

    def _start_ready(self, device: DeviceState) -> None:
        while device.free_cores > 0:
            task = pop_next(device)
            if task is None:
                return
            task.waiting_time += self.clock - task.enqueued_at
            task.enqueued_at = None
            task.set_status(TaskStatus.EXECUTING)
            if task.remaining_service_ms is None:
                task.remaining_service_ms = (
                    expected_execution_time(task.size_mi, device.spec.cpu_rate) * 1000.0
                )
            task.exec_started_at = self.clock
            task.exec_token += 1
            device.executing[task.id] = task
            resumed = task.pause_count > 0
            if resumed:
                self.metrics.bump("resumes")
            self._trace(
                "exec_start",
                task=task.id,
                type=task.type.name,
                dev=device.id,
                hrt_waiting=len(device.queues[0]) if self.flags.priority_queueing else 0,
                resumed=resumed,
            )
            self.schedule(
                self._make_event(
                    self.clock + task.remaining_service_ms,
                    EventKind.EXECUTION_COMPLETE,
                    task=task,
                    device=device,
                    token=task.exec_token,
                )
            )

    def _on_execution_complete(self, event: Event) -> None:
        task, device = event.task, event.device
        if event.token != task.exec_token or task.id not in device.executing:
            return  # stale: the task was paused, flushed, or reallocated
        del device.executing[task.id]
        task.execution_time += self.clock - task.exec_started_at
        task.exec_started_at = None
        task.remaining_service_ms = 0.0
        self._trace("exec_complete", task=task.id, dev=device.id)
        if device.id == task.generator_id:
            self._result_arrive(task, device)
        else:
            link = "main" if device.id == EDGE_SERVER_ID else "internal"
            duration = transfer_time(
                self.cfg.network.result_bytes, link, self.network, self.rng_network
            )
            task.leg_started_at = self.clock
            self.schedule(
                self._make_event(
                    self.clock + duration, EventKind.RESULT_RETURNED, task=task, device=device
                )
            )
        self._start_ready(device)

    def _on_result_returned(self, event: Event) -> None:
        self._result_arrive(event.task, event.device)

    def _result_arrive(self, task: Task, executor: DeviceState) -> None:
        if task.leg_started_at is not None:
            task.network_time += self.clock - task.leg_started_at
            task.leg_started_at = None
        generator = self.devices[task.generator_id]
        if not generator.present:
            self._attempt_failed(task, FailureReason.MOBILITY, executor)
            return
        if is_deadline_met(self.clock, task.generated_at, task.latency_budget_ms):
            self._succeed(task, executor)
        else:
            self._attempt_failed(task, FailureReason.DEADLINE_MISSED, executor)

    def _succeed(self, task: Task, executor: DeviceState) -> None:
        if task.decision_state is not None:
            r = reward(
                True, task.type, task.total_delay, task.latency_budget_ms, self.flags.shaped_rewards
            )
            self.qtable.update(task.decision_state, ASSIGN, r, self.cfg.learning.alpha)
            task.decision_state = None
        task.set_status(TaskStatus.SUCCEEDED)
        self.metrics.record_terminal(task)
        del self.live[task.id]
        self._trace(
            "task_success",
            task=task.id,
            type=task.type.name,
            dev=executor.id,
            delay=task.total_delay,
        )

    def _attempt_failed(self, task: Task, reason: FailureReason, device: Optional[DeviceState]) -> None:
        """One offload attempt failed; learn from it, then retry or finalize."""
        if task.decision_state is not None:
            r = reward(
                False, task.type, task.total_delay, task.latency_budget_ms, self.flags.shaped_rewards
            )
            self.qtable.update(task.decision_state, ASSIGN, r, self.cfg.learning.alpha)
            task.decision_state = None
        retry = on_task_failed(task, reason, self._server_reachable(task), self.flags)
        if retry is not None:
            self._begin_realloc(task, retry)
            self._trace(
                "realloc",
                task=task.id,
                type=task.type.name,
                reason=retry.value,
                frm=device.id if device else None,
                to=EDGE_SERVER_ID,
            )
            task.assigned_to = EDGE_SERVER_ID
            task.remaining_service_ms = None  # service restarts on the new host
            self._send_to_server(task)
        else:
            self._final_fail(task, reason)

    def _begin_realloc(self, task: Task, reason: ReallocReason) -> None:
        task.realloc_count += 1
        self.metrics.reallocations[reason] += 1
        task.set_status(TaskStatus.REALLOCATED)
        task.set_status(TaskStatus.PENDING)

    def _final_fail(self, task: Task, reason: FailureReason) -> None:
        task.failure = reason
        task.set_status(TaskStatus.FAILED)
        self.metrics.record_terminal(task)
        del self.live[task.id]
        self._trace("task_failed", task=task.id, type=task.type.name, reason=reason.value)

    # ------------------------------------------------------------------
    # Mobility and energy ticks
    # ------------------------------------------------------------------

    def _on_device_moved(self, event: Event) -> None:
        cfg = self.cfg.mobility
        for did in self.mobile_ids:
            device = self.devices[did]
            if device.dead:
                continue
            transition = step_mobility(
                device,
                cfg.tick_ms,
                self.cfg.area_m,
                self.rng_mobility,
                cfg.departure_prob,
                cfg.arrival_prob,
            )
            if transition == "departed":
                self.schedule(
                    self._make_event(self.clock, EventKind.DEVICE_DEPARTED, device=device)
                )
            elif transition == "arrived":
                self.schedule(
                    self._make_event(self.clock, EventKind.DEVICE_ARRIVED, device=device)
                )
        next_at = self.clock + cfg.tick_ms
        if next_at <= self.horizon:
            self.schedule(self._make_event(next_at, EventKind.DEVICE_MOVED))

    def _on_device_departed(self, event: Event) -> None:
        # State already flipped by step_mobility; log the transition. Tasks
        # held by the device keep executing and fail at the return link if the
        # device is still away.
        self.metrics.bump("departures")
        self._trace("depart", dev=event.device.id)

    def _on_device_arrived(self, event: Event) -> None:
        self.metrics.bump("arrivals")
        self._trace("arrive", dev=event.device.id)

    def _on_battery_tick(self, event: Event) -> None:
        threshold = self.energy.threshold_fraction
        for did in self.battery_ids:
            device = self.devices[did]
            if device.dead:
                continue
            drain_battery(device, self.energy.tick_interval_ms)
            if device.battery_wh <= 0.0:
                self._device_died(device)
            elif (
                not device.blacklisted
                and self.flags.battery_reallocation
                and device.battery_wh < threshold * device.spec.battery_capacity_wh
            ):
                self._low_battery(device)
        next_at = self.clock + self.energy.tick_interval_ms
        if next_at <= self.horizon:
            self.schedule(self._make_event(next_at, EventKind.BATTERY_TICK))

    def _device_died(self, device: DeviceState) -> None:
        device.dead = True
        self.metrics.bump("device_deaths")
        self._trace("device_dead", dev=device.id)
        doomed: List[Task] = []
        for lane in device.queues:
            doomed.extend(lane)
            lane.clear()
        for task in doomed:
            task.waiting_time += self.clock - task.enqueued_at
            task.enqueued_at = None
        executing = sorted(device.executing.values(), key=lambda t: t.id)
        for task in executing:
            task.execution_time += self.clock - task.exec_started_at
            remaining = task.remaining_service_ms - (self.clock - task.exec_started_at)
            task.remaining_service_ms = max(0.0, remaining)
            task.exec_started_at = None
            task.exec_token += 1
        device.executing.clear()
        for task in doomed + executing:
            self._attempt_failed(task, FailureReason.DEAD_DEVICE, device)

    def _low_battery(self, device: DeviceState) -> None:
        """Threshold crossing: blacklist the device and push its queued
        non-HRT work back through routing. Executing tasks and queued HRT stay."""
        device.blacklisted = True
        self.metrics.bump("low_battery_crossings")
        self._trace("low_battery", dev=device.id)
        pulled = pull_for_low_battery(device)
        for task in pulled:
            task.waiting_time += self.clock - task.enqueued_at
            task.enqueued_at = None
            if task.realloc_count >= REALLOC_CAP:
                # Retry budget exhausted; the task stays and takes its chances.
                task.enqueued_at = self.clock
                device.queues[0].append(task)
                continue
            task.decision_state = None
            self._begin_realloc(task, ReallocReason.INSUFFICIENT_POWER)
            self._dispatch(
                task,
                realloc_reason=ReallocReason.INSUFFICIENT_POWER,
                from_device=device.id,
            )

    # ------------------------------------------------------------------
    # Horizon resolution
    # ------------------------------------------------------------------

    def _resolve_horizon(self) -> None:
        """Resolve tasks still in flight at the end of the run: past-budget
        ones count as deadline failures, the rest leave the generated pool."""
        for task_id in sorted(self.live):
            task = self.live[task_id]
            if task.leg_started_at is not None:
                task.network_time += self.clock - task.leg_started_at
                task.leg_started_at = None
            if task.enqueued_at is not None:
                task.waiting_time += self.clock - task.enqueued_at
                task.enqueued_at = None
            if task.exec_started_at is not None:
                task.execution_time += self.clock - task.exec_started_at
                task.exec_started_at = None
            past_budget = self.clock - task.generated_at > task.latency_budget_ms
            if past_budget and self.cfg.count_inflight_past_budget_as_failed:
                task.failure = FailureReason.DEADLINE_MISSED
                task.status = TaskStatus.FAILED
                self.metrics.record_terminal(task)
                self._trace("horizon_fail", task=task.id, type=task.type.name)
            else:
                self.metrics.drop_phantom(task)
                self._trace("horizon_drop", task=task.id, type=task.type.name)
        self.live.clear()

    _HANDLERS = {
        EventKind.TASK_GENERATED: _on_task_generated,
        EventKind.TRANSFER_COMPLETE: _on_transfer_complete,
        EventKind.EXECUTION_COMPLETE: _on_execution_complete,
        EventKind.RESULT_RETURNED: _on_result_returned,
        EventKind.DEVICE_MOVED: _on_device_moved,
        EventKind.DEVICE_DEPARTED: _on_device_departed,
        EventKind.DEVICE_ARRIVED: _on_device_arrived,
        EventKind.BATTERY_TICK: _on_battery_tick,
    }
