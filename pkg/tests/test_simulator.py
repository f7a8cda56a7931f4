"""Dispatch policy, availability models, cache semantics, and the
monotonicity property the pruning stage depends on."""

import math
import random
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime

import numpy as np
import pytest

from dersizer.core import EPS_POWER, DerKind, DerSpec, DesignSpace, MicrogridDesign
from dersizer.simulator import (
    DispatchConfig,
    ReferenceSimulator,
    SimulationCache,
    discharge_capability_kw,
    dispatch_step,
    initial_bess_state,
    memoized_operate,
    operate,
    pv_availability,
    wind_availability,
)


def stamps(*hours):
    return tuple(datetime(2024, 3, 4, int(h), int(round((h % 1) * 60))) for h in hours)


@pytest.fixture()
def pv_bess_space():
    return DesignSpace(
        ders=(
            DerSpec(name="pv", kind=DerKind.PHOTOVOLTAIC, upper_bound=500.0),
            DerSpec(
                name="bess",
                kind=DerKind.BATTERY_STORAGE,
                upper_bound=500.0,
                charge_ratio=2.0,
                discharge_ratio=2.0,
            ),
        )
    )


# ---------------------------------------------------------------------------
# availability models

def test_pv_availability_peaks_at_solar_noon():
    factors = pv_availability(stamps(12.0), DispatchConfig())
    assert factors[0] == 1.0


def test_pv_availability_zero_at_midnight():
    factors = pv_availability(stamps(0.0), DispatchConfig())
    assert factors[0] == 0.0


def test_pv_availability_quarter_morning():
    factors = pv_availability(stamps(9.0), DispatchConfig())
    assert factors[0] == pytest.approx(math.sin(math.pi / 4), abs=1e-12)


def test_pv_availability_scales_with_peak_factor():
    factors = pv_availability(stamps(12.0), DispatchConfig(pv_peak_factor=0.8))
    assert factors[0] == pytest.approx(0.8)


def test_pv_availability_rejects_empty_window():
    with pytest.raises(ValueError):
        pv_availability(stamps(12.0), DispatchConfig(pv_daylight_start=18.0, pv_daylight_end=6.0))


def test_wind_availability_constant_and_series():
    assert np.all(wind_availability(5, DispatchConfig()) == 0.35)
    series = DispatchConfig(wind_capacity_factor=(0.1, 0.2, 0.3))
    assert wind_availability(3, series).tolist() == [0.1, 0.2, 0.3]
    with pytest.raises(ValueError):
        wind_availability(4, series)


def test_dispatch_config_validation():
    with pytest.raises(ValueError):
        DispatchConfig(bess_min_soc=0.9, bess_initial_soc=0.5)
    with pytest.raises(ValueError):
        DispatchConfig(bess_charge_efficiency=0.0)
    with pytest.raises(ValueError):
        DispatchConfig(wind_capacity_factor=1.5)


# ---------------------------------------------------------------------------
# dispatch_step

def test_step_single_source_sufficiency(pv_bess_space):
    config = DispatchConfig()
    state = initial_bess_state(pv_bess_space.ders[1], 0.0, config)
    used, _, flag = dispatch_step(pv_bess_space, 50.0, [60.0, 0.0], (state,), config, 1800.0)
    assert used[0] == 50.0
    assert flag == 0


def test_step_shortfall_flags_deficit():
    space = DesignSpace(
        ders=(DerSpec(name="diesel", kind=DerKind.DIESEL_GENERATOR, upper_bound=100.0),)
    )
    used, _, flag = dispatch_step(space, 50.0, [40.0], (), DispatchConfig(), 1800.0)
    assert used[0] == 40.0
    assert flag == 1


def test_step_surplus_charges_battery(pv_bess_space):
    # independent arithmetic: 10 kW of 30 kW PV serves load, the 20 kW
    # surplus is below the 50 kW charge power cap (100 kWh / 2 h), so the
    # store gains 20 kW * (240/3600) h * 0.95
    config = DispatchConfig(bess_initial_soc=0.5)
    state = initial_bess_state(pv_bess_space.ders[1], 100.0, config)
    assert state.energy_stored == 50.0
    assert state.max_charge_power == 50.0
    used, states, flag = dispatch_step(pv_bess_space, 10.0, [30.0, 0.0], (state,), config, 240.0)
    assert used[0] == 30.0  # 10 for load + 20 charging
    assert used[1] == 0.0
    assert states[0].energy_stored == 50.0 + 20.0 * (240.0 / 3600.0) * 0.95
    assert flag == 0


def test_step_charge_respects_power_cap_and_headroom(pv_bess_space):
    config = DispatchConfig(bess_initial_soc=0.5)
    state = initial_bess_state(pv_bess_space.ders[1], 100.0, config)
    # surplus 400 kW but the charge cap is 50 kW
    used, states, _ = dispatch_step(pv_bess_space, 0.0, [400.0, 0.0], (state,), config, 1800.0)
    assert used[0] == 50.0
    assert states[0].energy_stored == pytest.approx(50.0 + 50.0 * 0.5 * 0.95)
    # nearly full: headroom limits the charge power below the cap
    near_full = initial_bess_state(pv_bess_space.ders[1], 100.0, DispatchConfig(bess_initial_soc=0.99))
    used, states, _ = dispatch_step(pv_bess_space, 0.0, [400.0, 0.0], (near_full,), config, 1800.0)
    expected_power = (100.0 - 99.0) / (0.95 * 0.5)
    assert used[0] == pytest.approx(expected_power)
    assert states[0].energy_stored == pytest.approx(100.0)


def test_step_discharge_respects_energy_floor(pv_bess_space):
    config = DispatchConfig(bess_initial_soc=0.2, bess_min_soc=0.1)
    state = initial_bess_state(pv_bess_space.ders[1], 100.0, config)
    # usable energy 10 kWh, deliverable 10 * 0.95 / 0.5h = 19 kW < demand
    used, states, flag = dispatch_step(pv_bess_space, 60.0, [0.0, 0.0], (state,), config, 1800.0)
    assert used[1] == pytest.approx(19.0)
    assert states[0].energy_stored == pytest.approx(10.0)  # exactly at the floor
    assert flag == 1


def test_step_energy_conservation_random_walk(pv_bess_space):
    rng = random.Random(29)
    config = DispatchConfig(bess_initial_soc=0.6)
    state = initial_bess_state(pv_bess_space.ders[1], 200.0, config)
    hours = 0.5
    for _ in range(300):
        demand = rng.uniform(0, 150)
        pv = rng.uniform(0, 200)
        used, new_states, _ = dispatch_step(
            pv_bess_space, demand, [pv, 0.0], (state,), config, hours * 3600.0
        )
        pv_to_load = min(demand, pv)
        charge = used[0] - pv_to_load
        discharge = used[1]
        assert charge >= -1e-12 and discharge >= -1e-12
        expected_delta = (charge * 0.95 - discharge / 0.95) * hours
        actual_delta = new_states[0].energy_stored - state.energy_stored
        assert math.isclose(actual_delta, expected_delta, rel_tol=1e-9, abs_tol=1e-12)
        # SoC stays within [min_soc, 1] at every step boundary
        assert new_states[0].energy_stored >= 0.1 * 200.0 - 1e-9
        assert new_states[0].energy_stored <= 200.0 + 1e-9
        # no phantom generation
        assert sum(used) <= demand + charge + 1e-9
        state = new_states[0]


# ---------------------------------------------------------------------------
# operate

def test_operate_diesel_covering_peak_has_no_deficit(desk_load, desk_space, desk_dispatch):
    design = MicrogridDesign((desk_space.ders[0].upper_bound, 0.0, 0.0))
    outcome = operate(desk_space, design, desk_load, desk_dispatch)
    assert outcome.deficit_flags.sum() == 0


def test_operate_empty_design_always_deficient(desk_load, desk_space, desk_dispatch):
    outcome = operate(desk_space, MicrogridDesign((0.0, 0.0, 0.0)), desk_load, desk_dispatch)
    assert outcome.deficit_flags.all()


def test_operate_pv_only_deficits_match_closed_form(desk_load, desk_space, desk_dispatch):
    # oracle: a PV-only design fails exactly where capacity * daylight factor
    # cannot cover demand, enumerated step by step from the availability curve
    cap = 3.0 * desk_load.peak_kw
    factors = pv_availability(desk_load.times, desk_dispatch)
    expected = [
        1 if cap * factors[t] < desk_load.demand_kw[t] - EPS_POWER else 0
        for t in range(len(desk_load))
    ]
    design = MicrogridDesign((0.0, cap, 0.0))
    outcome = operate(desk_space, design, desk_load, desk_dispatch)
    assert outcome.deficit_flags.tolist() == expected
    # with this profile those are exactly the dark steps with positive demand
    for t, flag in enumerate(expected):
        dark = factors[t] * cap <= EPS_POWER
        assert flag == (1 if dark and desk_load.demand_kw[t] > EPS_POWER else 0)


def test_operate_is_deterministic(desk_load, desk_space, desk_dispatch):
    design = MicrogridDesign((45.0, 106.0, 176.0))
    a = operate(desk_space, design, desk_load, desk_dispatch)
    b = operate(desk_space, design, desk_load, desk_dispatch)
    assert np.array_equal(a.deficit_flags, b.deficit_flags)
    assert np.array_equal(a.per_der_available, b.per_der_available)
    assert np.array_equal(a.per_der_used, b.per_der_used)


def test_operate_used_never_exceeds_available(desk_load, desk_space, desk_dispatch):
    rng = random.Random(31)
    for _ in range(10):
        design = MicrogridDesign(
            tuple(rng.uniform(0, spec.upper_bound) for spec in desk_space.ders)
        )
        outcome = operate(desk_space, design, desk_load, desk_dispatch)
        assert np.all(outcome.per_der_used <= outcome.per_der_available + 1e-9)
        # deficit flag consistency with the used matrix
        served = outcome.per_der_used.sum(axis=0)
        for t in range(len(desk_load)):
            short = served[t] < desk_load.demand_kw[t] - EPS_POWER
            assert bool(outcome.deficit_flags[t]) == short


def test_operate_wind_turbine_constant_factor(desk_load):
    space = DesignSpace(
        ders=(
            DerSpec(name="wind", kind=DerKind.WIND_TURBINE, upper_bound=300.0),
            DerSpec(name="diesel", kind=DerKind.DIESEL_GENERATOR, upper_bound=100.0),
        )
    )
    outcome = operate(space, MicrogridDesign((200.0, 0.0)), desk_load, DispatchConfig())
    assert np.all(outcome.per_der_available[0] == 200.0 * 0.35)


def test_reference_simulator_wraps_operate(desk_load, desk_space, desk_dispatch):
    sim = ReferenceSimulator(desk_space, desk_dispatch)
    design = MicrogridDesign((90.0, 0.0, 0.0))
    outcome = sim.operate(design, desk_load)
    assert outcome.deficit_flags.sum() == 0


def test_monotonicity_raising_capacity_never_adds_deficits(desk_load, desk_space, desk_dispatch):
    # 200 random (design, single-capacity-increase) pairs: per-step flags may
    # only switch off when any one capacity grows
    rng = random.Random(37)
    for _ in range(200):
        caps = [rng.uniform(0, spec.upper_bound) for spec in desk_space.ders]
        i = rng.randrange(len(caps))
        raised = list(caps)
        raised[i] = rng.uniform(caps[i], desk_space.ders[i].upper_bound)
        base = operate(desk_space, MicrogridDesign(tuple(caps)), desk_load, desk_dispatch)
        more = operate(desk_space, MicrogridDesign(tuple(raised)), desk_load, desk_dispatch)
        assert np.all(more.deficit_flags <= base.deficit_flags)


# ---------------------------------------------------------------------------
# cache

def test_cache_counts_unique_designs_once(desk_load, desk_space, desk_dispatch):
    cache = SimulationCache()
    design = MicrogridDesign((90.0, 0.0, 0.0))
    first = memoized_operate(cache, desk_space, design, desk_load, desk_dispatch)
    second = memoized_operate(cache, desk_space, design, desk_load, desk_dispatch)
    assert cache.unique_simulations == 1
    assert second is first  # hit returns the identical cached metrics
    other = MicrogridDesign((90.0, 26.5, 0.0))
    memoized_operate(cache, desk_space, other, desk_load, desk_dispatch)
    assert cache.unique_simulations == 2


def test_cache_concurrent_same_key_counted_once(desk_load, desk_space, desk_dispatch):
    cache = SimulationCache()
    design = MicrogridDesign((90.0, 53.0, 88.0))

    def work(_):
        return memoized_operate(cache, desk_space, design, desk_load, desk_dispatch)

    with ThreadPoolExecutor(max_workers=8) as pool:
        results = list(pool.map(work, range(16)))
    assert cache.unique_simulations == 1
    assert all(r.capacities == design.capacities for r in results)
    assert len({id(r) for r in results}) == 1


def test_cache_key_folds_negative_zero():
    key = SimulationCache.key_for(MicrogridDesign((-0.0, 10.0)))
    assert key == (0.0, 10.0)
    assert math.copysign(1.0, key[0]) == 1.0


def test_memoized_metrics_match_direct_computation(desk_load, desk_space, desk_dispatch):
    cache = SimulationCache()
    design = MicrogridDesign((45.0, 106.0, 176.0))
    evaluated = memoized_operate(cache, desk_space, design, desk_load, desk_dispatch)
    outcome = operate(desk_space, design, desk_load, desk_dispatch)
    from dersizer.core import deficit_ratio, unused_ratio

    assert evaluated.deficit_ratio == deficit_ratio(outcome, desk_load)
    for i in range(len(desk_space.ders)):
        assert evaluated.unused_ratios[i] == unused_ratio(outcome, i, design.capacities[i])


def test_discharge_capability_zero_capacity():
    spec = DerSpec(name="b", kind=DerKind.BATTERY_STORAGE, upper_bound=10.0, charge_ratio=2.0, discharge_ratio=2.0)
    state = initial_bess_state(spec, 0.0, DispatchConfig())
    assert discharge_capability_kw(state, DispatchConfig(), 1800.0) == 0.0
