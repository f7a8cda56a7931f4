"""Sizing search: exhaustive enumeration with pruning, binary refinement,
and local descent, chained into the full sizing pipeline.

All stages share one SimulationCache, so reported simulation counts are
unique designs actually dispatched. Results are deterministic for a fixed
(inputs, rng_seed) regardless of worker count.
"""

from __future__ import annotations

import itertools
import logging
import math
import os
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .core import (
    DEFAULT_CAPACITY_PRECISION,
    CapacityGrid,
    DesignSpace,
    EvaluatedDesign,
    LoadProfile,
    MicrogridDesign,
    capacity_grid,
    non_dominated,
    snap_to_grid,
)
from .simulator import DispatchConfig, SimulationCache, memoized_operate

log = logging.getLogger(__name__)

# Refuse exhaustive enumerations larger than this many candidates.
PRODUCT_SAFETY_CAP = 10**8

THREADS_ENV_VAR = "DER_SIZER_THREADS"


class SearchSpaceTooLarge(RuntimeError):
    """Raised when an exhaustive enumeration would exceed the safety cap."""


@dataclass(frozen=True)
class SearchConfig:
    """Knobs for the three-stage sizing pipeline."""

    coarse_level_points: int = 6
    fine_level_points: int = 11
    outer_passes: int | None = None
    rng_seed: int = 0
    deficit_display_threshold: float = 0.01

    def __post_init__(self) -> None:
        if self.coarse_level_points < 2:
            raise ValueError("coarse_level_points must be >= 2")
        if self.fine_level_points < self.coarse_level_points:
            raise ValueError("fine_level_points must be >= coarse_level_points")
        if self.outer_passes is not None and self.outer_passes < 1:
            raise ValueError("outer_passes must be >= 1")
        if self.deficit_display_threshold < 0:
            raise ValueError("deficit_display_threshold must be >= 0")


@dataclass(frozen=True)
class SearchReport:
    """Pipeline output: the final design set plus bookkeeping."""

    final_designs: tuple[EvaluatedDesign, ...]
    all_simulated: int
    per_stage_counts: dict[str, dict[str, int]]
    elapsed_seconds: float
    seed: int


def worker_count() -> int:
    """Worker cap for seed-parallel stages, from DER_SIZER_THREADS."""
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw is None:
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError as exc:
        raise ValueError(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}") from exc
    if value < 1:
        raise ValueError(f"{THREADS_ENV_VAR} must be >= 1, got {value}")
    return value


def initial_step_size(n_intervals: int) -> int:
    """Largest power of two <= n (the starting step of the halving search)."""
    if n_intervals < 1:
        raise ValueError(f"n_intervals must be >= 1, got {n_intervals}")
    return 1 << (n_intervals.bit_length() - 1)


def build_grids(
    space: DesignSpace, level_points: int, precision: float = DEFAULT_CAPACITY_PRECISION
) -> tuple[CapacityGrid, ...]:
    return tuple(capacity_grid(spec, level_points, precision) for spec in space.ders)


def exhaustive_search(
    cache: SimulationCache,
    space: DesignSpace,
    load: LoadProfile,
    dispatch_config: DispatchConfig,
    level_points: int,
    precision: float = DEFAULT_CAPACITY_PRECISION,
    safety_cap: int = PRODUCT_SAFETY_CAP,
) -> list[EvaluatedDesign]:
    """Enumerate the full capacity grid, skipping provably deficient designs.

    Candidates are visited with each DER's capacities descending (the first
    DER varies slowest), so a design whose single-level-raised neighbor is
    already known deficient can be pruned without simulating: under a
    monotone simulator it can only be worse. Returns the simulated designs.
    """
    grids = build_grids(space, level_points, precision)
    total = math.prod(len(g.points) for g in grids)
    if total > safety_cap:
        raise SearchSpaceTooLarge(
            f"exhaustive enumeration of {total} candidates exceeds the cap of {safety_cap}"
        )

    n_ders = len(space.ders)
    tops = tuple(g.n_intervals for g in grids)
    deficit_set: set[tuple[int, ...]] = set()
    simulated: list[EvaluatedDesign] = []

    for idx in itertools.product(*(range(top, -1, -1) for top in tops)):
        pruned = False
        for i in range(n_ders):
            if idx[i] >= tops[i]:
                continue  # raised neighbor clamps to itself
            neighbor = idx[:i] + (idx[i] + 1,) + idx[i + 1 :]
            if neighbor in deficit_set:
                deficit_set.add(idx)
                pruned = True
                break
        if pruned:
            continue
        design = MicrogridDesign(tuple(grids[i].points[idx[i]] for i in range(n_ders)))
        evaluated = memoized_operate(cache, space, design, load, dispatch_config)
        simulated.append(evaluated)
        if evaluated.deficit_ratio > 0:
            deficit_set.add(idx)
    return simulated


def _binary_search_one_seed(
    cache: SimulationCache,
    space: DesignSpace,
    load: LoadProfile,
    dispatch_config: DispatchConfig,
    grids: tuple[CapacityGrid, ...],
    seed_design: EvaluatedDesign,
    child_seed: int,
    passes: int,
) -> list[EvaluatedDesign]:
    """Halving search around one seed; returns every design it evaluated."""
    n_ders = len(space.ders)
    rng = random.Random(child_seed)
    out: list[EvaluatedDesign] = []

    snapped = snap_to_grid(seed_design.design, grids)
    base = memoized_operate(cache, space, snapped, load, dispatch_config)
    out.append(base)

    for _ in range(passes):
        # each pass restarts from the snapped seed with a fresh DER order,
        # exploring a different branch of the neighborhood
        decrease = base.deficit_ratio == 0
        current = base
        order = list(range(n_ders))
        rng.shuffle(order)
        for i in order:
            spec = space.ders[i]
            grid = grids[i]
            h = initial_step_size(grid.n_intervals)
            while h >= 1:
                while True:
                    cap = current.capacities[i]
                    if decrease:
                        target = max(cap - h * grid.spacing, spec.lower_bound)
                    else:
                        target = min(cap + h * grid.spacing, spec.upper_bound)
                    target = grid.snap(target)
                    if target == cap:
                        # bound reached; a feasible design at the top turns
                        # the search back downward
                        if not decrease and current.deficit_ratio == 0:
                            decrease = True
                        break
                    candidate = current.design.with_capacity(i, target)
                    evaluated = memoized_operate(cache, space, candidate, load, dispatch_config)
                    out.append(evaluated)
                    if evaluated.deficit_ratio > current.deficit_ratio:
                        break
                    current = evaluated
                h //= 2
    return out


def binary_search_refine(
    cache: SimulationCache,
    space: DesignSpace,
    load: LoadProfile,
    dispatch_config: DispatchConfig,
    level_points: int,
    seeds: list[EvaluatedDesign],
    rng: random.Random,
    outer_passes: int | None = None,
    precision: float = DEFAULT_CAPACITY_PRECISION,
    workers: int | None = None,
) -> list[EvaluatedDesign]:
    """Diversify a seed set by per-DER halving searches on the fine grid.

    Each seed is snapped to the fine grid, then searched in `outer_passes`
    rounds (default: one per DER) over rng-ordered DERs: capacity moves in
    halving steps, downward while no deficit appears, upward until one
    disappears. Returns the seeds plus every design simulated, first
    occurrence kept on duplicates.
    """
    if not seeds:
        raise ValueError("binary search needs a non-empty seed set")
    grids = build_grids(space, level_points, precision)
    passes = outer_passes if outer_passes is not None else len(space.ders)
    child_seeds = [rng.getrandbits(64) for _ in seeds]

    def run(job: tuple[EvaluatedDesign, int]) -> list[EvaluatedDesign]:
        seed_design, child = job
        return _binary_search_one_seed(
            cache, space, load, dispatch_config, grids, seed_design, child, passes
        )

    jobs = list(zip(seeds, child_seeds))
    trajectories = _map_ordered(run, jobs, workers)

    merged: dict[tuple[float, ...], EvaluatedDesign] = {}
    for evaluated in seeds:
        merged.setdefault(cache.key_for(evaluated.design), evaluated)
    for trajectory in trajectories:
        for evaluated in trajectory:
            merged.setdefault(cache.key_for(evaluated.design), evaluated)
    return list(merged.values())


def _local_search_one_seed(
    cache: SimulationCache,
    space: DesignSpace,
    load: LoadProfile,
    dispatch_config: DispatchConfig,
    grids: tuple[CapacityGrid, ...],
    seed_design: EvaluatedDesign,
    passes: int,
) -> list[EvaluatedDesign]:
    """Single-level descent from one seed; returns every design evaluated."""
    base = memoized_operate(cache, space, seed_design.design, load, dispatch_config)
    out = [base]
    if base.deficit_ratio > 0:
        return out

    current = base
    n_ders = len(space.ders)
    for _ in range(passes):
        for i in range(n_ders):
            spec = space.ders[i]
            grid = grids[i]
            while True:
                cap = current.capacities[i]
                target = grid.snap(max(cap - grid.spacing, spec.lower_bound))
                if target == cap:
                    break
                candidate = current.design.with_capacity(i, target)
                evaluated = memoized_operate(cache, space, candidate, load, dispatch_config)
                out.append(evaluated)
                if evaluated.deficit_ratio > 0:
                    break
                current = evaluated
    return out


def local_search(
    cache: SimulationCache,
    space: DesignSpace,
    load: LoadProfile,
    dispatch_config: DispatchConfig,
    level_points: int,
    seeds: list[EvaluatedDesign],
    outer_passes: int | None = None,
    precision: float = DEFAULT_CAPACITY_PRECISION,
    workers: int | None = None,
) -> list[EvaluatedDesign]:
    """Walk each zero-deficit seed downward one grid level at a time.

    DERs are lowered in fixed index order, repeating for `outer_passes`
    rounds so slack opened by one DER's descent can be recovered from the
    ones before it. Seeds with deficits pass through untouched.
    """
    grids = build_grids(space, level_points, precision)
    passes = outer_passes if outer_passes is not None else len(space.ders)

    def run(seed_design: EvaluatedDesign) -> list[EvaluatedDesign]:
        return _local_search_one_seed(
            cache, space, load, dispatch_config, grids, seed_design, passes
        )

    trajectories = _map_ordered(run, seeds, workers)

    merged: dict[tuple[float, ...], EvaluatedDesign] = {}
    for evaluated in seeds:
        merged.setdefault(cache.key_for(evaluated.design), evaluated)
    for trajectory in trajectories:
        for evaluated in trajectory:
            merged.setdefault(cache.key_for(evaluated.design), evaluated)
    return list(merged.values())


def _map_ordered(fn, items, workers: int | None):
    """Map preserving order; uses a thread pool when more than one worker."""
    if workers is None:
        workers = worker_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def run_pipeline(
    space: DesignSpace,
    load: LoadProfile,
    dispatch_config: DispatchConfig,
    search_config: SearchConfig,
    precision: float = DEFAULT_CAPACITY_PRECISION,
    workers: int | None = None,
) -> SearchReport:
    """Run the three sizing stages and assemble the final non-dominated set."""
    started = time.perf_counter()
    cache = SimulationCache()

    coarse = exhaustive_search(
        cache, space, load, dispatch_config, search_config.coarse_level_points, precision
    )
    sims_stage1 = cache.unique_simulations
    log.info(
        "exhaustive stage: %d designs simulated (%d grid points per DER)",
        sims_stage1,
        search_config.coarse_level_points,
    )

    rng = random.Random(search_config.rng_seed)
    refined = binary_search_refine(
        cache,
        space,
        load,
        dispatch_config,
        search_config.fine_level_points,
        coarse,
        rng,
        search_config.outer_passes,
        precision,
        workers,
    )
    sims_stage2 = cache.unique_simulations
    log.info(
        "binary search stage: %d new simulations, %d designs held",
        sims_stage2 - sims_stage1,
        len(refined),
    )

    local_seeds = non_dominated(refined)
    polished = local_search(
        cache,
        space,
        load,
        dispatch_config,
        search_config.fine_level_points,
        local_seeds,
        search_config.outer_passes,
        precision,
        workers,
    )
    sims_stage3 = cache.unique_simulations
    log.info(
        "local search stage: %d new simulations over %d seeds",
        sims_stage3 - sims_stage2,
        len(local_seeds),
    )

    final = [
        d
        for d in non_dominated(polished)
        if d.deficit_ratio <= search_config.deficit_display_threshold
    ]
    elapsed = time.perf_counter() - started
    log.info(
        "pipeline done: %d final designs, %d unique simulations, %.2fs",
        len(final),
        sims_stage3,
        elapsed,
    )

    return SearchReport(
        final_designs=tuple(final),
        all_simulated=sims_stage3,
        per_stage_counts={
            "exhaustive": {"simulations": sims_stage1, "designs": len(coarse)},
            "binary_search": {"simulations": sims_stage2 - sims_stage1, "designs": len(refined)},
            "local_search": {"simulations": sims_stage3 - sims_stage2, "designs": len(polished)},
        },
        elapsed_seconds=elapsed,
        seed=search_config.rng_seed,
    )
