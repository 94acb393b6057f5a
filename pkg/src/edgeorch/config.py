"""Scenario configuration: defaults, strict parsing/validation, and
deterministic population construction."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import yaml

from .domain import (
    DeviceKind,
    DeviceState,
    DeviceSpec,
    TaskType,
    edge_server_spec,
    standard_device_specs,
)
from .policy import POLICY_BASELINE, POLICY_ROBUST

EDGE_SERVER_ID = "edge-server"

# Population shares per device kind, in canonical row order.
DEFAULT_MIX: Dict[str, float] = {
    "laptop": 0.11,
    "smartphone": 0.18,
    "gateway": 0.11,
    "stationary_sensor": 0.28,
    "mobile_sensor": 0.32,
}

# Application profiles: (latency budget ms, size MI) per task class.
DEFAULT_APPS: Dict[str, Dict[str, float]] = {
    "HRT": {"latency_ms": 15.0, "size_mi": 200.0},
    "SRT": {"latency_ms": 500.0, "size_mi": 5000.0},
    "NRT": {"latency_ms": 30000.0, "size_mi": 10000.0},
}

DEFAULT_RATES: Dict[str, float] = {"HRT": 135.0, "SRT": 135.0, "NRT": 270.0}

_KIND_ORDER = [
    DeviceKind.LAPTOP,
    DeviceKind.SMARTPHONE,
    DeviceKind.GATEWAY,
    DeviceKind.STATIONARY_SENSOR,
    DeviceKind.MOBILE_SENSOR,
]


class ConfigError(ValueError):
    """Invalid or unknown scenario configuration, with the offending key path."""


@dataclass(frozen=True)
class ArrivalConfig:
    process: str = "poisson"             # poisson | periodic
    interpretation: str = "system_wide"  # system_wide | per_device
    rate_scale: float = 1.0
    rates_per_minute: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_RATES))


@dataclass(frozen=True)
class NetworkConfig:
    internal_bandwidth_mbps: float = 100.0
    internal_latency_ms: float = 2.0
    main_bandwidth_mbps: float = 50.0
    main_latency_ms: float = 10.0
    fluctuation: bool = True
    task_bytes_per_mi: float = 100.0
    result_bytes: float = 2000.0


@dataclass(frozen=True)
class EnergyConfig:
    threshold_fraction: float = 0.2
    tick_ms: float = 1000.0
    initial_fraction: float = 1.0
    mobile_sensor_battery_wh: float = 10.0
    mobile_sensor_power_w: float = 0.1


@dataclass(frozen=True)
class MobilityConfig:
    tick_ms: float = 1000.0
    departure_prob: float = 0.001
    arrival_prob: float = 0.001
    reach_radius_m: Optional[float] = None  # None: whole internal network


@dataclass(frozen=True)
class LearningConfig:
    alpha: float = 0.1
    epsilon_start: float = 0.3
    epsilon_end: float = 0.02
    reliability_threshold: float = -1.0
    warmup_visits: int = 1


@dataclass(frozen=True)
class CompatConfig:
    tag_universe: int = 4
    tags_per_device: int = 3


@dataclass(frozen=True)
class EdgeServerConfig:
    total_gips: float = 400.0
    cores: int = 16


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "default"
    device_count: int = 50
    duration_minutes: float = 30.0
    seeds: Tuple[int, ...] = (1, 2, 3, 4, 5)
    policy: str = POLICY_ROBUST
    emergency: bool = False
    area_m: Tuple[float, float] = (200.0, 200.0)
    device_mix: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_MIX))
    apps: Dict[str, Dict[str, float]] = field(
        default_factory=lambda: {k: dict(v) for k, v in DEFAULT_APPS.items()}
    )
    arrival: ArrivalConfig = field(default_factory=ArrivalConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    mobility: MobilityConfig = field(default_factory=MobilityConfig)
    learning: LearningConfig = field(default_factory=LearningConfig)
    compat: CompatConfig = field(default_factory=CompatConfig)
    edge_server: EdgeServerConfig = field(default_factory=EdgeServerConfig)
    # Horizon policy: unresolved tasks past budget fail; the rest are excluded
    # from the generated pool.
    count_inflight_past_budget_as_failed: bool = True

    @property
    def duration_ms(self) -> float:
        return self.duration_minutes * 60_000.0

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "device_count": self.device_count,
            "duration_minutes": self.duration_minutes,
            "seeds": list(self.seeds),
            "policy": self.policy,
            "emergency": self.emergency,
            "area_m": list(self.area_m),
            "device_mix": dict(self.device_mix),
            "apps": {k: dict(v) for k, v in self.apps.items()},
            "arrival": {
                "process": self.arrival.process,
                "interpretation": self.arrival.interpretation,
                "rate_scale": self.arrival.rate_scale,
                "rates_per_minute": dict(self.arrival.rates_per_minute),
            },
            "network": {
                "internal_bandwidth_mbps": self.network.internal_bandwidth_mbps,
                "internal_latency_ms": self.network.internal_latency_ms,
                "main_bandwidth_mbps": self.network.main_bandwidth_mbps,
                "main_latency_ms": self.network.main_latency_ms,
                "fluctuation": self.network.fluctuation,
                "task_bytes_per_mi": self.network.task_bytes_per_mi,
                "result_bytes": self.network.result_bytes,
            },
            "energy": {
                "threshold_fraction": self.energy.threshold_fraction,
                "tick_ms": self.energy.tick_ms,
                "initial_fraction": self.energy.initial_fraction,
                "mobile_sensor_battery_wh": self.energy.mobile_sensor_battery_wh,
                "mobile_sensor_power_w": self.energy.mobile_sensor_power_w,
            },
            "mobility": {
                "tick_ms": self.mobility.tick_ms,
                "departure_prob": self.mobility.departure_prob,
                "arrival_prob": self.mobility.arrival_prob,
                "reach_radius_m": self.mobility.reach_radius_m,
            },
            "learning": {
                "alpha": self.learning.alpha,
                "epsilon_start": self.learning.epsilon_start,
                "epsilon_end": self.learning.epsilon_end,
                "reliability_threshold": self.learning.reliability_threshold,
                "warmup_visits": self.learning.warmup_visits,
            },
            "compat": {
                "tag_universe": self.compat.tag_universe,
                "tags_per_device": self.compat.tags_per_device,
            },
            "edge_server": {
                "total_gips": self.edge_server.total_gips,
                "cores": self.edge_server.cores,
            },
            "count_inflight_past_budget_as_failed": self.count_inflight_past_budget_as_failed,
        }


def _require_mapping(value, path: str) -> Dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(value).__name__}")
    return value


def _take(raw: Dict, known: Dict[str, type], path: str) -> Dict:
    """Pull known keys out of raw, rejecting anything unknown."""
    unknown = set(raw) - set(known)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"{path}.{key}: unknown key")
    out = {}
    for key, kind in known.items():
        if key in raw and raw[key] is not None:
            value = raw[key]
            if kind is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if kind is not None and not isinstance(value, kind):
                raise ConfigError(
                    f"{path}.{key}: expected {kind.__name__}, got {type(value).__name__}"
                )
            out[key] = value
    return out


def _positive(value: float, path: str) -> float:
    if value <= 0:
        raise ConfigError(f"{path}: must be positive")
    return value


def parse_and_validate(text: str) -> ScenarioConfig:
    """Parse a YAML scenario file; unset keys fall back to the defaults above."""
    raw = _require_mapping(yaml.safe_load(text) if text.strip() else None, "scenario")
    top = _take(
        raw,
        {
            "name": str,
            "device_count": int,
            "duration_minutes": float,
            "seeds": list,
            "policy": str,
            "emergency": bool,
            "area_m": list,
            "device_mix": dict,
            "apps": dict,
            "arrival": dict,
            "network": dict,
            "energy": dict,
            "mobility": dict,
            "learning": dict,
            "compat": dict,
            "edge_server": dict,
            "count_inflight_past_budget_as_failed": bool,
        },
        "scenario",
    )

    cfg = ScenarioConfig()

    if "device_mix" in top:
        mix = dict(DEFAULT_MIX)
        for key, value in top["device_mix"].items():
            if key not in mix:
                raise ConfigError(f"scenario.device_mix.{key}: unknown device kind")
            if not isinstance(value, (int, float)) or isinstance(value, bool) or value < 0:
                raise ConfigError(f"scenario.device_mix.{key}: expected a fraction >= 0")
            mix[key] = float(value)
        top["device_mix"] = mix

    if "apps" in top:
        apps = {k: dict(v) for k, v in DEFAULT_APPS.items()}
        for name, profile in top["apps"].items():
            if name not in apps:
                raise ConfigError(f"scenario.apps.{name}: unknown task type")
            profile = _take(
                _require_mapping(profile, f"scenario.apps.{name}"),
                {"latency_ms": float, "size_mi": float},
                f"scenario.apps.{name}",
            )
            for key, value in profile.items():
                apps[name][key] = _positive(value, f"scenario.apps.{name}.{key}")
        top["apps"] = apps

    if "arrival" in top:
        sub = _take(
            top["arrival"],
            {"process": str, "interpretation": str, "rate_scale": float, "rates_per_minute": dict},
            "scenario.arrival",
        )
        if "rates_per_minute" in sub:
            rates = dict(DEFAULT_RATES)
            for name, value in sub["rates_per_minute"].items():
                if name not in rates:
                    raise ConfigError(f"scenario.arrival.rates_per_minute.{name}: unknown task type")
                if not isinstance(value, (int, float)) or isinstance(value, bool) or value < 0:
                    raise ConfigError(
                        f"scenario.arrival.rates_per_minute.{name}: expected a rate >= 0"
                    )
                rates[name] = float(value)
            sub["rates_per_minute"] = rates
        if sub.get("process", "poisson") not in ("poisson", "periodic"):
            raise ConfigError("scenario.arrival.process: expected poisson or periodic")
        if sub.get("interpretation", "system_wide") not in ("system_wide", "per_device"):
            raise ConfigError("scenario.arrival.interpretation: expected system_wide or per_device")
        if "rate_scale" in sub:
            _positive(sub["rate_scale"], "scenario.arrival.rate_scale")
        top["arrival"] = ArrivalConfig(**sub)

    for section, cls in (
        ("network", NetworkConfig),
        ("energy", EnergyConfig),
        ("mobility", MobilityConfig),
        ("learning", LearningConfig),
        ("compat", CompatConfig),
        ("edge_server", EdgeServerConfig),
    ):
        if section in top:
            fields_types = {
                "network": {
                    "internal_bandwidth_mbps": float,
                    "internal_latency_ms": float,
                    "main_bandwidth_mbps": float,
                    "main_latency_ms": float,
                    "fluctuation": bool,
                    "task_bytes_per_mi": float,
                    "result_bytes": float,
                },
                "energy": {
                    "threshold_fraction": float,
                    "tick_ms": float,
                    "initial_fraction": float,
                    "mobile_sensor_battery_wh": float,
                    "mobile_sensor_power_w": float,
                },
                "mobility": {
                    "tick_ms": float,
                    "departure_prob": float,
                    "arrival_prob": float,
                    "reach_radius_m": float,
                },
                "learning": {
                    "alpha": float,
                    "epsilon_start": float,
                    "epsilon_end": float,
                    "reliability_threshold": float,
                    "warmup_visits": int,
                },
                "compat": {"tag_universe": int, "tags_per_device": int},
                "edge_server": {"total_gips": float, "cores": int},
            }[section]
            top[section] = cls(**_take(top[section], fields_types, f"scenario.{section}"))

    if "seeds" in top:
        seeds = top["seeds"]
        if not seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
            raise ConfigError("scenario.seeds: expected a non-empty list of integers")
        top["seeds"] = tuple(seeds)

    if "area_m" in top:
        area = top["area_m"]
        if len(area) != 2 or not all(isinstance(v, (int, float)) and v > 0 for v in area):
            raise ConfigError("scenario.area_m: expected two positive lengths")
        top["area_m"] = (float(area[0]), float(area[1]))

    cfg = ScenarioConfig(**top)
    _validate(cfg)
    return cfg


def load_scenario(path: str) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_and_validate(fh.read())


def _validate(cfg: ScenarioConfig) -> None:
    mix_sum = sum(cfg.device_mix.values())
    if abs(mix_sum - 1.0) > 1e-9:
        raise ConfigError(f"scenario.device_mix: fractions sum to {mix_sum}, expected 1")
    if cfg.device_count < 2:
        raise ConfigError("scenario.device_count: need at least 2 devices")
    if cfg.duration_minutes <= 0:
        raise ConfigError("scenario.duration_minutes: must be positive")
    if cfg.policy not in (POLICY_BASELINE, POLICY_ROBUST):
        raise ConfigError(
            f"scenario.policy: unknown policy {cfg.policy!r} "
            f"(expected {POLICY_BASELINE} or {POLICY_ROBUST})"
        )
    if not (0.0 < cfg.energy.threshold_fraction < 1.0):
        raise ConfigError("scenario.energy.threshold_fraction: must be in (0, 1)")
    if not (0.0 < cfg.energy.initial_fraction <= 1.0):
        raise ConfigError("scenario.energy.initial_fraction: must be in (0, 1]")
    if cfg.compat.tag_universe < 1:
        raise ConfigError("scenario.compat.tag_universe: must be >= 1")
    if not (1 <= cfg.compat.tags_per_device <= cfg.compat.tag_universe):
        raise ConfigError("scenario.compat.tags_per_device: must be in [1, tag_universe]")
    if cfg.edge_server.cores < 1 or cfg.edge_server.total_gips <= 0:
        raise ConfigError("scenario.edge_server: needs cores >= 1 and total_gips > 0")
    for key in ("internal_bandwidth_mbps", "main_bandwidth_mbps"):
        if getattr(cfg.network, key) <= 0:
            raise ConfigError(f"scenario.network.{key}: must be positive")


def counts_by_kind(cfg: ScenarioConfig) -> Dict[DeviceKind, int]:
    """Largest-remainder apportionment of the mix; row order breaks ties."""
    exact = [(kind, cfg.device_mix[kind.value] * cfg.device_count) for kind in _KIND_ORDER]
    counts = {kind: int(x) for kind, x in exact}
    leftover = cfg.device_count - sum(counts.values())
    remainders = sorted(
        ((x - int(x), -_KIND_ORDER.index(kind), kind) for kind, x in exact), reverse=True
    )
    for i in range(leftover):
        counts[remainders[i][2]] += 1
    return counts


def build_population(cfg: ScenarioConfig, rng: random.Random) -> List[DeviceState]:
    """Devices plus the edge server, in deterministic id order.

    Positions are uniform in the area, batteries start at the configured
    fraction of capacity, and each computing device draws a capability-tag
    subset. In the emergency scenario half the devices, chosen at random, are
    cut from the main network.
    """
    specs = standard_device_specs(
        mobile_sensor_battery_wh=cfg.energy.mobile_sensor_battery_wh,
        mobile_sensor_power_w=cfg.energy.mobile_sensor_power_w,
    )
    width, height = cfg.area_m
    devices: List[DeviceState] = []
    counts = counts_by_kind(cfg)
    for kind in _KIND_ORDER:
        spec = specs[kind]
        for i in range(counts[kind]):
            device = DeviceState(
                id=f"{kind.value}-{i:03d}",
                spec=spec,
                x=rng.uniform(0.0, width),
                y=rng.uniform(0.0, height),
                battery_wh=spec.battery_capacity_wh * cfg.energy.initial_fraction,
            )
            if spec.mobile:
                device.waypoint = (rng.uniform(0.0, width), rng.uniform(0.0, height))
            if spec.is_computing:
                device.tags = set(
                    rng.sample(range(cfg.compat.tag_universe), cfg.compat.tags_per_device)
                )
            devices.append(device)

    if cfg.emergency:
        cut = rng.sample(range(len(devices)), len(devices) // 2)
        for idx in cut:
            devices[idx].partitioned = True

    server = DeviceState(
        id=EDGE_SERVER_ID,
        spec=edge_server_spec(cfg.edge_server.total_gips, cfg.edge_server.cores),
        x=width / 2.0,
        y=height / 2.0,
        tags=set(range(cfg.compat.tag_universe)),
    )
    devices.append(server)
    return devices
