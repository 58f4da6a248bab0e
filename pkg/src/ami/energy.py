"""Analytical sensing/compute energy and battery-life accounting.

Units: power in mW, energy in mJ (1 mW for 1 s is 1 mJ), capacity in mWh.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

SAMPLING_AND_COMPUTE = "sampling_and_compute"
COMPUTE_ONLY = "compute_only"
MODES = (SAMPLING_AND_COMPUTE, COMPUTE_ONLY)

# datasheet ranges for the four wearable sensor families (mW)
SENSOR_POWER_MW = {"imu": (0.3, 1.0), "ecg": (1.0, 5.0), "emg": (6.0, 15.0), "ppg": (4.0, 10.0)}
BATTERY_MWH = 300.0


@dataclass
class SensorPower:
    p_min: float
    p_max: float
    p_mid: float | None = None

    def __post_init__(self):
        if self.p_mid is None:
            self.p_mid = 0.5 * (self.p_min + self.p_max)
        if not 0 < self.p_min <= self.p_mid <= self.p_max:
            raise ValueError(f"need 0 < p_min <= p_mid <= p_max, got {self.p_min}, {self.p_mid}, {self.p_max}")

    def at(self, point: str) -> float:
        return {"min": self.p_min, "mid": self.p_mid, "max": self.p_max}[point]


@dataclass
class PowerTable:
    sensors: dict[str, SensorPower]
    capacity_mwh: float = BATTERY_MWH
    token_mj: float = 0.0
    layer_mj: float = 0.0
    controller_mj: float = 0.0
    point: str = "mid"

    @classmethod
    def from_ranges(cls, ranges: dict[str, tuple[float, float]], **kw) -> "PowerTable":
        return cls({k: SensorPower(float(v[0]), float(v[1])) for k, v in ranges.items()}, **kw)

    def power(self, name: str, point: str | None = None) -> float:
        if name not in self.sensors:
            raise KeyError(f"modality '{name}' has no entry in the power table")
        return self.sensors[name].at(point or self.point)


@dataclass
class SensingTrace:
    """Per-window gates ``[W, M]`` and active patches ``[W, M, L]`` of a run."""

    names: list[str]
    gates: np.ndarray
    active: np.ndarray
    window_seconds: float

    @property
    def num_windows(self) -> int:
        return len(self.gates)

    def modality_rate(self) -> float:
        return float(self.gates.mean()) if self.gates.size else 0.0

    def patch_rate(self) -> float:
        if not self.gates.size:
            return 0.0
        return float((self.gates * self.active.mean(axis=-1)).mean())

    def duty_cycles(self, count_patches: bool = True) -> np.ndarray:
        """Per-modality fraction of time the sensor is powered."""
        if count_patches:
            return (self.gates * self.active.mean(axis=-1)).mean(axis=0)
        return self.gates.mean(axis=0)


@dataclass
class EnergyReport:
    avg_power_mw: float
    battery_life_h: float
    sensing_mj: float  # per window
    compute_mj: float  # per window
    window_seconds: float
    savings_pct: dict = field(default_factory=dict)

    @property
    def total_mj(self) -> float:
        return self.sensing_mj + self.compute_mj

    def to_dict(self) -> dict:
        return {"avg_power_mw": self.avg_power_mw, "battery_life_h": self.battery_life_h,
                "sensing_mj_per_window": self.sensing_mj, "compute_mj_per_window": self.compute_mj,
                "total_mj_per_window": self.total_mj, "window_seconds": self.window_seconds,
                "savings_pct": self.savings_pct}


def window_energy(trace: SensingTrace, table: PowerTable, mode: str = SAMPLING_AND_COMPUTE,
                  layers: int = 0, controller: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Sensing and compute energy (mJ) for every window of ``trace``.

    In ``sampling_and_compute`` mode a skipped patch saves both sensor
    sampling and tokenization; in ``compute_only`` mode the sensor keeps
    sampling through skipped patches and only tokenization is saved.
    """
    if mode not in MODES:
        raise ValueError(f"unknown energy mode {mode!r}; expected one of {MODES}")
    power = np.array([table.power(n) for n in trace.names])
    frac = trace.active.mean(axis=-1) if mode == SAMPLING_AND_COMPUTE else np.ones_like(trace.gates)
    sensing = (trace.gates * frac * power).sum(axis=1) * trace.window_seconds
    tokens = (trace.gates[..., None] * trace.active).sum(axis=(1, 2))
    compute = tokens * table.token_mj + layers * table.layer_mj + (table.controller_mj if controller else 0.0)
    return sensing, compute


def energy_report(trace: SensingTrace, table: PowerTable, mode: str = SAMPLING_AND_COMPUTE,
                  layers: int = 0, controller: bool = False) -> EnergyReport:
    sensing, compute = window_energy(trace, table, mode, layers, controller)
    s, c = float(sensing.mean()), float(compute.mean())
    avg = (s + c) / trace.window_seconds
    return EnergyReport(avg, battery_hours(table.capacity_mwh, avg), s, c, trace.window_seconds)


def battery_hours(capacity_mwh: float, power_mw: float) -> float:
    return math.inf if power_mw <= 0 else capacity_mwh / power_mw


def battery_life(duty: dict[str, float], table: PowerTable, point: str | None = None) -> float:
    """Hours of operation for per-modality duty cycles in [0, 1]."""
    total = 0.0
    for name, d in duty.items():
        if not 0.0 <= d <= 1.0:
            raise ValueError(f"duty cycle for {name} must be in [0, 1], got {d}")
        total += d * table.power(name, point)
    return battery_hours(table.capacity_mwh, total)


def battery_curve(table: PowerTable, point: str | None = None,
                  names: list[str] | None = None) -> list[tuple[str, float, float]]:
    """(subset, power mW, hours) for every non-empty subset of sensors at full duty."""
    names = names or list(table.sensors)
    rows = []
    for k in range(1, len(names) + 1):
        for combo in itertools.combinations(names, k):
            p = sum(table.power(n, point) for n in combo)
            rows.append(("+".join(combo), p, battery_hours(table.capacity_mwh, p)))
    return rows


def savings(baseline: float, ami: float) -> float:
    """Relative saving in percent."""
    if baseline == 0:
        return 0.0
    return 100.0 * (baseline - ami) / baseline


def savings_report(ami: EnergyReport, baseline: EnergyReport, ami_sensing: float,
                   base_sensing: float, ami_cfg: dict | None = None, base_cfg: dict | None = None) -> dict:
    """Savings of an adaptive run against a dense run on the same data.

    ``*_cfg`` are the parts of both run configs that must agree (data,
    model); a mismatch raises.
    """
    if ami_cfg is not None and base_cfg is not None and ami_cfg != base_cfg:
        diff = sorted(k for k in set(ami_cfg) | set(base_cfg) if ami_cfg.get(k) != base_cfg.get(k))
        raise ValueError(f"runs differ beyond sensing policy: {diff}")
    return {
        "sensing_pct": {"baseline": base_sensing, "ami": ami_sensing},
        "sensing_energy_savings_pct": savings(baseline.sensing_mj, ami.sensing_mj),
        "compute_energy_savings_pct": savings(baseline.compute_mj, ami.compute_mj),
        "energy_savings_pct": savings(baseline.total_mj, ami.total_mj),
        "battery_life_h": {"baseline": baseline.battery_life_h, "ami": ami.battery_life_h},
    }


def calibrate_compute_costs(dense_sensing_mj: float, dense_tokens: int, layers: int,
                            dense_total_mj: float, target_savings: float, sensing_fraction: float,
                            ) -> tuple[float, float]:
    """Per-token and per-layer costs (mJ) such that a dense run costs
    ``dense_total_mj`` per window and a run sensing ``sensing_fraction`` of
    modalities (with tokens scaling alike) saves ``target_savings``.

    Sensing and token costs scale with the sensing fraction; layer costs do
    not.
    """
    variable = target_savings * dense_total_mj / (1.0 - sensing_fraction)
    token_mj = (variable - dense_sensing_mj) / dense_tokens
    layer_mj = (dense_total_mj - variable) / layers
    if token_mj < 0 or layer_mj < 0:
        raise ValueError("targets not reachable with non-negative coefficients")
    return token_mj, layer_mj


def mhealth_table() -> PowerTable:
    """Power table for the four MHEALTH modality groups with compute costs
    calibrated to a target dense cost per window and adaptive saving."""
    imu = SENSOR_POWER_MW["imu"]
    ranges = {"acc": imu, "gyro": imu, "mag": imu, "ecg": SENSOR_POWER_MW["ecg"]}
    table = PowerTable.from_ranges(ranges)
    window_s = 2.0
    dense_sensing = sum(table.power(n) for n in ranges) * window_s
    token_mj, layer_mj = calibrate_compute_costs(dense_sensing, dense_tokens=4 * 10, layers=4,
                                                 dense_total_mj=254.74, target_savings=0.2140,
                                                 sensing_fraction=0.38)
    table.token_mj, table.layer_mj = token_mj, layer_mj
    return table
