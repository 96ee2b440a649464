import math
from unittest.mock import MagicMock

import numpy as np
import pytest

from errors import ConfigurationError, ContractViolation
from logical_clock import LogicalClock, TickModel, pmsam_ticks
from membrane_engine import (
    Decision,
    Membrane,
    PmsamConfig,
    check_termination,
    compute_threshold,
    create_membranes,
    distribute,
    eliminate_to_global,
    execute,
    initialize,
    migrate,
    parallel_climb,
    restart,
    run_pmsam,
    somersault_final,
    watch_jump_round,
)
from monkey_core import JumpTally, MaParams, MonkeyState, SearchSchedule
from objective import ObjectiveDescriptor, evaluate, get_objective, is_feasible


def _membrane(label, value, size=1):
    monkeys = [MonkeyState(np.full(2, float(label)), float(value)) for _ in range(size)]
    membrane = Membrane(label=label, monkeys=monkeys, stream=MagicMock(), clock=LogicalClock())
    membrane.refresh_best()
    return membrane


def _live(desc, positions, stream, label=1):
    points = [np.asarray(p, dtype=float) for p in positions]
    monkeys = [MonkeyState(x, evaluate(desc, x)) for x in points]
    membrane = Membrane(label=label, monkeys=monkeys, stream=stream, clock=LogicalClock())
    membrane.refresh_best()
    return membrane


def _plane_region(seed=1):
    desc = get_objective("f1", 2)
    return initialize(desc, PmsamConfig(ma=MaParams(n=4, d=2), membranes=1, seed=seed))


def _split(region):
    restart(region)
    compute_threshold(len(region.monkeys), region.config.membranes, region.clock)
    return distribute(region, create_membranes(region))


def test_threshold():
    clock = LogicalClock()
    assert compute_threshold(20, 4, clock) == 5
    assert clock.t == 1
    assert compute_threshold(7, 7) == 1
    with pytest.raises(ConfigurationError) as exc:
        compute_threshold(3, 4)
    assert exc.value.key == "m"


def test_initialize(tiny_config, sphere5):
    region = initialize(sphere5, tiny_config)
    assert len(region.monkeys) == 20
    assert all(is_feasible(sphere5, m.position) for m in region.monkeys)
    assert region.clock.t == 0
    assert region.iteration == 0
    assert region.global_best.value == min(m.value for m in region.monkeys)
    assert region.log[0].phase == "initialize"


def test_initialize_rejects_dimension_mismatch(tiny_config):
    with pytest.raises(ConfigurationError) as exc:
        initialize(get_objective("f1", 3), tiny_config)
    assert exc.value.key == "d"


def test_initialize_rejects_more_membranes_than_monkeys(sphere5, small_params):
    with pytest.raises(ConfigurationError):
        initialize(sphere5, PmsamConfig(ma=small_params, membranes=21))


def test_distribution_follows_index_order(tiny_config, sphere5):
    region = initialize(sphere5, tiny_config)
    population = list(region.monkeys)
    membranes = _split(region)
    assert [m.label for m in membranes] == [1, 2, 3, 4]
    for k, membrane in enumerate(membranes):
        expected = population[5 * k : 5 * (k + 1)]
        assert len(membrane.monkeys) == 5
        assert all(a is b for a, b in zip(membrane.monkeys, expected))
    assert region.monkeys == []
    assert [entry.t for entry in region.log[:4]] == [0, 1, 2, 3]


def test_last_membrane_takes_remainder(sphere5):
    config = PmsamConfig(ma=MaParams(n=22, d=5), membranes=4)
    region = initialize(sphere5, config)
    sizes = [len(m.monkeys) for m in _split(region)]
    assert sizes == [5, 5, 5, 7]


def test_membranes_are_created_once(tiny_config, sphere5):
    region = initialize(sphere5, tiny_config)
    _split(region)
    with pytest.raises(ContractViolation):
        create_membranes(region)


def test_membranes_draw_from_distinct_streams(tiny_config, sphere5):
    region = initialize(sphere5, tiny_config)
    draws = [m.stream.random() for m in _split(region)]
    assert len(set(draws)) == 4


@pytest.mark.parametrize("m", range(1, 18))
def test_migration_halves_until_one(m):
    membranes = [_membrane(label, value=label, size=2) for label in range(1, m + 1)]
    rounds = 0
    while len(membranes) > 1:
        before = len(membranes)
        membranes = migrate(membranes)
        assert len(membranes) == math.ceil(before / 2)
        assert sum(len(x.monkeys) for x in membranes) == 2 * m
        rounds += 1
    assert rounds == math.ceil(math.log2(m))


def test_migration_keeps_better_membrane():
    low, high = _membrane(1, value=5.0), _membrane(2, value=3.0)
    (survivor,) = migrate([high, low])
    assert survivor.label == 2
    assert [m.value for m in survivor.monkeys] == [5.0, 3.0]
    assert survivor.local_best.value == 3.0


def test_migration_tie_goes_to_lower_label():
    (survivor,) = migrate([_membrane(1, value=4.0), _membrane(2, value=4.0)])
    assert survivor.label == 1


def test_odd_membrane_passes_through():
    survivors = migrate([_membrane(label, value=label) for label in (1, 2, 3)])
    assert [s.label for s in survivors] == [1, 3]
    assert len(survivors[1].monkeys) == 1
    assert survivors[0].clock.t == survivors[1].clock.t == 2


def test_migration_needs_two_membranes():
    with pytest.raises(ContractViolation):
        migrate([_membrane(1, value=0.0)])


def test_somersault_and_elimination_need_a_single_membrane(tiny_config, sphere5):
    region = initialize(sphere5, tiny_config)
    membranes = _split(region)
    with pytest.raises(ContractViolation):
        somersault_final(membranes, sphere5, tiny_config.ma)
    with pytest.raises(ContractViolation):
        eliminate_to_global(membranes, region)


async def test_parallel_climb_charges_every_membrane_once(tiny_config, sphere5):
    region = initialize(sphere5, tiny_config)
    membranes = _split(region)
    before = [m.local_best.value for m in membranes]
    membranes = await parallel_climb(membranes, sphere5, tiny_config.ma, workers=3)
    expected = 3 + tiny_config.ma.climb_number * 11 + 1
    assert [m.clock.t for m in membranes] == [expected] * 4
    assert all(m.local_best.value <= b for m, b in zip(membranes, before))


async def test_trace_scenario_trajectory():
    desc = get_objective("f1", 30)
    config = PmsamConfig(ma=MaParams(n=20, d=30, cyclic_number=1), membranes=4, seed=0)
    region = await execute(desc, config)
    log = region.log
    assert [e.t for e in log[:4]] == [0, 1, 2, 3]
    assert [e.phase for e in log[:4]] == [
        "initialize",
        "division",
        "membrane-creation",
        "distribution",
    ]
    assert [e.membranes for e in log if e.phase == "migrate"] == [2, 1]
    assert next(e for e in log if e.phase == "climb").membranes == 4
    assert log[-1].phase == "elimination"
    assert region.clock.t == pmsam_ticks(20, 4, config.ma, TickModel())
    assert sum(region.clock.ledger.values()) == region.clock.t


@pytest.mark.parametrize("n,m", [(10, 1), (10, 3), (17, 5), (12, 12), (9, 8)])
async def test_measured_ticks_match_closed_form(n, m, sphere5):
    params = MaParams(n=n, d=5, climb_number=3, cyclic_number=2)
    for model in (TickModel(), TickModel.uniform(2)):
        config = PmsamConfig(ma=params, membranes=m, seed=n * m)
        report = await run_pmsam(sphere5, config, model=model)
        assert report.iterations_used == 2
        assert report.ticks == pmsam_ticks(n, m, params, model, iterations=2)
        assert sum(report.ledger.values()) == report.ticks


async def test_population_is_conserved_and_feasible(tiny_config, sphere5):
    region = await execute(sphere5, tiny_config)
    assert len(region.monkeys) == tiny_config.ma.n
    assert all(is_feasible(sphere5, m.position) for m in region.monkeys)
    assert region.membranes == []


async def test_global_best_never_worsens(sphere5, small_params):
    params = small_params.model_copy(update={"cyclic_number": 5})
    region = await execute(sphere5, PmsamConfig(ma=params, membranes=4, seed=3))
    values = [value for _, value in region.trace]
    assert [i for i, _ in region.trace] == [1, 2, 3, 4, 5]
    assert all(b <= a for a, b in zip(values, values[1:]))
    assert region.global_best.value == values[-1]


async def test_results_do_not_depend_on_workers(tiny_config, sphere5):
    one = await run_pmsam(sphere5, tiny_config, workers=1)
    many = await run_pmsam(sphere5, tiny_config, workers=4)
    assert one.model_dump(exclude={"wall_seconds"}) == many.model_dump(
        exclude={"wall_seconds"}
    )


async def test_same_seed_same_report(tiny_config, sphere5):
    first = await run_pmsam(sphere5, tiny_config)
    second = await run_pmsam(sphere5, tiny_config)
    assert first.best_position == second.best_position
    assert first.trace == second.trace


async def test_zero_time_budget_stops_before_first_iteration(tiny_config, sphere5):
    config = tiny_config.model_copy(update={"t_max": 0, "target_value": 1e12})
    report = await run_pmsam(sphere5, config)
    assert report.stop_reason == Decision.STOP_TIME.value
    assert report.iterations_used == 0
    assert report.trace == []


async def test_reachable_target_stops_feasible(tiny_config, sphere5):
    config = tiny_config.model_copy(update={"target_value": 1e12})
    report = await run_pmsam(sphere5, config)
    assert report.stop_reason == Decision.STOP_FEASIBLE.value
    assert report.iterations_used == 0


async def test_time_budget_cuts_the_run_short(sphere5, small_params):
    params = small_params.model_copy(update={"cyclic_number": 10})
    per_iteration = pmsam_ticks(20, 4, params, TickModel())
    config = PmsamConfig(ma=params, membranes=4, t_max=2 * per_iteration)
    report = await run_pmsam(sphere5, config)
    assert report.stop_reason == "stop_time"
    assert report.iterations_used == 2


async def test_zero_cycles_returns_initial_best(sphere5, small_params):
    params = small_params.model_copy(update={"cyclic_number": 0})
    region = await execute(sphere5, PmsamConfig(ma=params, membranes=4))
    assert region.decision is Decision.STOP_ITERATIONS
    assert region.iteration == 0
    assert region.clock.t == 0


def test_check_termination_order(tiny_config, sphere5):
    region = initialize(sphere5, tiny_config)
    assert check_termination(region) is Decision.CONTINUE
    region.iteration = tiny_config.ma.cyclic_number
    assert check_termination(region) is Decision.STOP_ITERATIONS
    region.config = tiny_config.model_copy(update={"target_value": 1e12})
    assert check_termination(region) is Decision.STOP_FEASIBLE
    region.config = tiny_config.model_copy(update={"target_value": 1e12, "t_max": 0})
    assert check_termination(region) is Decision.STOP_TIME


async def test_single_monkey_run_keeps_initial_best(sphere5):
    params = MaParams(n=1, d=5, climb_number=0, cyclic_number=1)
    config = PmsamConfig(ma=params, membranes=1, seed=12)
    initial = initialize(sphere5, config).global_best
    report = await run_pmsam(sphere5, config)
    assert report.best_value == initial.value
    assert report.ticks == pmsam_ticks(1, 1, params, TickModel())


def test_local_best_survives_the_somersault():
    desc = get_objective("f1", 2)
    membrane = _live(desc, [[3.0, 3.0], [4.0, 4.0]], np.random.default_rng(0))
    membrane.local_best = MonkeyState(np.zeros(2), 0.0)
    somersault_final(membrane, desc, MaParams(n=2, d=2))
    assert all(m.value > 0.0 for m in membrane.monkeys)

    region = _plane_region()
    region.global_best = MonkeyState(np.full(2, 5.0), 50.0)
    eliminate_to_global(membrane, region)
    assert region.global_best.value == 0.0
    np.testing.assert_array_equal(region.global_best.position, np.zeros(2))


def test_elimination_keeps_a_better_global_best():
    region = _plane_region()
    kept = MonkeyState(np.zeros(2), -1.0)
    region.global_best = kept
    region.clock.t = 9
    membrane = _membrane(1, value=3.0, size=2)
    membrane.clock.t = 5
    eliminate_to_global(membrane, region)
    assert region.global_best is kept
    assert region.clock.t == 9 + 2
    assert len(region.monkeys) == 2


def test_elimination_takes_a_better_incoming_best():
    region = _plane_region()
    region.global_best = MonkeyState(np.zeros(2), 10.0)
    membrane = _membrane(1, value=3.0)
    membrane.clock.t = 14
    eliminate_to_global(membrane, region)
    assert region.global_best is membrane.local_best
    assert region.global_best.value == 3.0
    assert region.clock.t == 14 + 2
    assert region.clock.ledger["solution-elimination"] == 1


def test_watch_jump_round_with_zero_eyesight_keeps_monkeys():
    desc = get_objective("f1", 2)
    membrane = _live(desc, [[1.0, 2.0], [-3.0, 0.5]], np.random.default_rng(4))
    before = list(membrane.monkeys)
    watch_jump_round(membrane, desc, MaParams(n=2, d=2, eyesight=0.0, max_resample=4))
    assert all(a is b for a, b in zip(membrane.monkeys, before))
    assert membrane.clock.t == 3
    assert (membrane.tally.draws, membrane.tally.jumps) == (8, 0)


def test_somersault_final_with_alpha_zero_is_identity(fixed_stream):
    desc = get_objective("f1", 2)
    membrane = _live(desc, [[1.0, 2.0], [-3.0, 0.5]], fixed_stream(uniform=0.0))
    before = [m.position.copy() for m in membrane.monkeys]
    somersault_final(membrane, desc, MaParams(n=2, d=2))
    for position, monkey in zip(before, membrane.monkeys):
        np.testing.assert_array_equal(monkey.position, position)
    assert membrane.clock.t == 6


def test_migration_pools_jump_tallies():
    low, high = _membrane(1, value=5.0), _membrane(2, value=3.0)
    low.tally, high.tally = JumpTally(draws=10, jumps=1), JumpTally(draws=4, jumps=2)
    (survivor,) = migrate([low, high])
    assert (survivor.tally.draws, survivor.tally.jumps) == (14, 3)


async def test_constant_shift_keeps_the_best_position(tiny_config, sphere5):
    shifted = ObjectiveDescriptor(
        id="shifted-sphere",
        dimension=5,
        lower=-100.0,
        upper=100.0,
        known_min=8.0,
        fn=lambda x: float(np.sum(x * x) + 8.0),
    )
    base = await run_pmsam(sphere5, tiny_config)
    moved = await run_pmsam(shifted, tiny_config)
    assert moved.best_position == base.best_position
    assert moved.best_value == pytest.approx(base.best_value + 8.0)


async def test_search_schedule_adapts_between_iterations(tiny_config, sphere5):
    region = await execute(sphere5, tiny_config)
    start = SearchSchedule.start(sphere5, tiny_config.ma)
    assert region.schedule.eyesight != start.eyesight

    fixed = tiny_config.ma.model_copy(update={"success_target": 0.0, "somersault_shrink": 1.0})
    region = await execute(sphere5, tiny_config.model_copy(update={"ma": fixed}))
    assert region.schedule.eyesight == fixed.eyesight
    assert region.schedule.sweep(region.iteration) == fixed
