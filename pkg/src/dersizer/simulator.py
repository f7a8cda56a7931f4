"""Reference microgrid operation simulator.

Implements a deterministic dispatch policy (renewables, then battery, then
diesel) behind a small simulator interface, plus a thread-safe memoizing
cache that counts unique simulations. Power in kW, energy in kWh, durations
in seconds.
"""

from __future__ import annotations

import abc
import functools
import math
import threading
from dataclasses import dataclass, replace
from datetime import datetime
from typing import Sequence

import numpy as np

from .core import (
    EPS_POWER,
    DerKind,
    DerSpec,
    DesignSpace,
    EvaluatedDesign,
    LoadProfile,
    MicrogridDesign,
    SimulationOutcome,
    deficit_ratio,
    unused_ratio,
)


@dataclass(frozen=True)
class DispatchConfig:
    """Tunable parameters of the reference dispatch policy."""

    pv_daylight_start: float = 6.0
    pv_daylight_end: float = 18.0
    pv_peak_factor: float = 1.0
    wind_capacity_factor: float | tuple[float, ...] = 0.35
    bess_charge_efficiency: float = 0.95
    bess_discharge_efficiency: float = 0.95
    bess_min_soc: float = 0.10
    bess_initial_soc: float = 1.00

    def __post_init__(self) -> None:
        if isinstance(self.wind_capacity_factor, (list, tuple)):
            object.__setattr__(self, "wind_capacity_factor", tuple(self.wind_capacity_factor))
            factors = self.wind_capacity_factor
        else:
            factors = (self.wind_capacity_factor,)
        for f in factors:
            if not 0.0 <= f <= 1.0:
                raise ValueError(f"wind capacity factor {f} outside [0, 1]")
        for label, value in (
            ("pv_peak_factor", self.pv_peak_factor),
            ("bess_charge_efficiency", self.bess_charge_efficiency),
            ("bess_discharge_efficiency", self.bess_discharge_efficiency),
            ("bess_initial_soc", self.bess_initial_soc),
        ):
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{label} must be in (0, 1], got {value}")
        if not 0.0 <= self.bess_min_soc < self.bess_initial_soc:
            raise ValueError("bess_min_soc must satisfy 0 <= min_soc < initial_soc")


@dataclass(frozen=True)
class BessState:
    """Battery energy state; power limits derive from capacity and ratios."""

    energy_stored: float
    energy_capacity: float
    max_charge_power: float
    max_discharge_power: float


class SimulatorInterface(abc.ABC):
    """Anything that can operate a microgrid design against a load profile."""

    @abc.abstractmethod
    def operate(self, design: MicrogridDesign, load: LoadProfile) -> SimulationOutcome:
        """Run the microgrid; must be deterministic in (design, load)."""


def pv_availability(times: Sequence[datetime], config: DispatchConfig) -> np.ndarray:
    """Per-step PV output fraction: clamped half-sine over the daylight window."""
    start, end = config.pv_daylight_start, config.pv_daylight_end
    if end <= start:
        raise ValueError(f"pv daylight window is empty: start={start}, end={end}")
    span = end - start
    factors = np.zeros(len(times))
    for t, stamp in enumerate(times):
        h = stamp.hour + stamp.minute / 60.0 + stamp.second / 3600.0 + stamp.microsecond / 3.6e9
        if start <= h <= end:
            factors[t] = config.pv_peak_factor * max(0.0, math.sin(math.pi * (h - start) / span))
    return factors


def wind_availability(n_steps: int, config: DispatchConfig) -> np.ndarray:
    """Per-step wind output fraction: constant or a supplied series."""
    wf = config.wind_capacity_factor
    if isinstance(wf, tuple):
        if len(wf) != n_steps:
            raise ValueError(f"wind series has {len(wf)} steps, load has {n_steps}")
        return np.asarray(wf, dtype=float)
    return np.full(n_steps, float(wf))


def initial_bess_state(spec: DerSpec, capacity: float, config: DispatchConfig) -> BessState:
    if spec.kind is not DerKind.BATTERY_STORAGE:
        raise ValueError(f"{spec.name} is not battery storage")
    return BessState(
        energy_stored=config.bess_initial_soc * capacity,
        energy_capacity=capacity,
        max_charge_power=capacity / spec.charge_ratio,
        max_discharge_power=capacity / spec.discharge_ratio,
    )


def discharge_capability_kw(state: BessState, config: DispatchConfig, duration_s: float) -> float:
    """Max power the battery could deliver this step without breaching min SoC."""
    usable = state.energy_stored - config.bess_min_soc * state.energy_capacity
    if usable <= 0:
        return 0.0
    hours = duration_s / 3600.0
    return min(state.max_discharge_power, usable * config.bess_discharge_efficiency / hours)


@functools.lru_cache(maxsize=64)
def _merit_indices(space: DesignSpace) -> tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...], tuple[int, ...]]:
    pv = tuple(i for i, d in enumerate(space.ders) if d.kind is DerKind.PHOTOVOLTAIC)
    wind = tuple(i for i, d in enumerate(space.ders) if d.kind is DerKind.WIND_TURBINE)
    bess = tuple(i for i, d in enumerate(space.ders) if d.kind is DerKind.BATTERY_STORAGE)
    diesel = tuple(i for i, d in enumerate(space.ders) if d.kind is DerKind.DIESEL_GENERATOR)
    return pv, wind, bess, diesel


def dispatch_step(
    space: DesignSpace,
    demand_kw: float,
    availabilities: Sequence[float],
    bess_states: tuple[BessState, ...],
    config: DispatchConfig,
    duration_s: float,
) -> tuple[tuple[float, ...], tuple[BessState, ...], int]:
    """Serve one step of demand and return (per-DER used kW, new states, deficit flag).

    Merit order: PV, then wind, serve load up to availability; leftover
    renewable surplus charges the batteries; batteries discharge for the
    remaining load; diesel covers the rest up to nameplate. Battery entries
    in `availabilities` are ignored (limits come from the state). Renewable
    power spent charging is reported as used.
    """
    pv_idx, wind_idx, bess_idx, diesel_idx = _merit_indices(space)
    hours = duration_s / 3600.0
    used = [0.0] * len(space.ders)

    remaining = demand_kw
    for i in pv_idx + wind_idx:
        take = min(remaining, availabilities[i])
        if take > 0:
            used[i] = take
            remaining -= take

    new_states = list(bess_states)
    eta_c = config.bess_charge_efficiency
    for b in range(len(bess_idx)):
        state = new_states[b]
        headroom = state.energy_capacity - state.energy_stored
        if headroom <= 0:
            continue
        budget = min(state.max_charge_power, headroom / (eta_c * hours))
        charged = 0.0
        for j in pv_idx + wind_idx:
            surplus = availabilities[j] - used[j]
            take = min(surplus, budget - charged)
            if take > 0:
                used[j] += take
                charged += take
        if charged > 0:
            new_states[b] = replace(state, energy_stored=state.energy_stored + charged * eta_c * hours)

    eta_d = config.bess_discharge_efficiency
    for b, i in enumerate(bess_idx):
        if remaining <= 0:
            break
        state = new_states[b]
        give = min(remaining, discharge_capability_kw(state, config, duration_s))
        if give > 0:
            used[i] = give
            remaining -= give
            new_states[b] = replace(state, energy_stored=state.energy_stored - give * hours / eta_d)

    for i in diesel_idx:
        take = min(remaining, availabilities[i])
        if take > 0:
            used[i] = take
            remaining -= take

    flag = 1 if remaining > EPS_POWER else 0
    return tuple(used), tuple(new_states), flag


def operate(
    space: DesignSpace,
    design: MicrogridDesign,
    load: LoadProfile,
    config: DispatchConfig,
) -> SimulationOutcome:
    """Fold the dispatch policy over the whole load horizon."""
    space.validate_design(design)
    pv_idx, wind_idx, bess_idx, diesel_idx = _merit_indices(space)
    n_ders, n_steps = len(space.ders), len(load)

    pv_factors = pv_availability(load.times, config)
    wind_factors = wind_availability(n_steps, config)

    available = np.zeros((n_ders, n_steps))
    caps = design.capacities
    for i in pv_idx:
        available[i] = caps[i] * pv_factors
    for i in wind_idx:
        available[i] = caps[i] * wind_factors
    for i in diesel_idx:
        available[i] = caps[i]

    states = tuple(
        initial_bess_state(space.ders[i], caps[i], config) for i in bess_idx
    )

    demand = load.demand_kw
    durations = load.durations_s
    # battery availability is derived from state inside the loop; the zero
    # placeholders in these rows are ignored by dispatch_step
    avail_rows = available.T.tolist()
    bess_avail: list[list[float]] = [[] for _ in bess_idx]
    used_rows: list[tuple[float, ...]] = []
    flags: list[int] = []

    for t in range(n_steps):
        duration = durations[t]
        for b in range(len(bess_idx)):
            bess_avail[b].append(discharge_capability_kw(states[b], config, duration))
        used_t, states, flag = dispatch_step(
            space, demand[t], avail_rows[t], states, config, duration
        )
        used_rows.append(used_t)
        flags.append(flag)

    for b, i in enumerate(bess_idx):
        available[i] = bess_avail[b]
    used = np.array(used_rows).T.copy()
    return SimulationOutcome(
        deficit_flags=np.array(flags, dtype=np.int8),
        per_der_available=available,
        per_der_used=used,
    )


class ReferenceSimulator(SimulatorInterface):
    """Deterministic dispatch simulator bound to a design space and config."""

    def __init__(self, space: DesignSpace, config: DispatchConfig | None = None):
        self.space = space
        self.config = config if config is not None else DispatchConfig()

    def operate(self, design: MicrogridDesign, load: LoadProfile) -> SimulationOutcome:
        return operate(self.space, design, load, self.config)


class SimulationCache:
    """Memoizes evaluated designs by capacity vector; counts unique simulations.

    Safe for concurrent use: the counter only moves when a new key is
    inserted, so two workers racing on the same design count it once.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._entries: dict[tuple[float, ...], EvaluatedDesign] = {}
        self._count = 0

    @staticmethod
    def key_for(design: MicrogridDesign) -> tuple[float, ...]:
        # round for key stability; +0.0 folds -0.0 into 0.0
        return tuple(round(c, 6) + 0.0 for c in design.capacities)

    @property
    def unique_simulations(self) -> int:
        with self._lock:
            return self._count

    def get(self, design: MicrogridDesign) -> EvaluatedDesign | None:
        with self._lock:
            return self._entries.get(self.key_for(design))

    def put_if_absent(self, design: MicrogridDesign, evaluated: EvaluatedDesign) -> EvaluatedDesign:
        key = self.key_for(design)
        with self._lock:
            existing = self._entries.get(key)
            if existing is not None:
                return existing
            self._entries[key] = evaluated
            self._count += 1
            return evaluated

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


def memoized_operate(
    cache: SimulationCache,
    space: DesignSpace,
    design: MicrogridDesign,
    load: LoadProfile,
    config: DispatchConfig,
) -> EvaluatedDesign:
    """Evaluate a design through the cache, simulating only on a miss."""
    hit = cache.get(design)
    if hit is not None:
        return hit
    outcome = operate(space, design, load, config)
    evaluated = EvaluatedDesign(
        design=design,
        deficit_ratio=deficit_ratio(outcome, load),
        unused_ratios=tuple(
            unused_ratio(outcome, i, design.capacities[i]) for i in range(len(space.ders))
        ),
    )
    return cache.put_if_absent(design, evaluated)
