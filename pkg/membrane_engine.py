from dataclasses import dataclass, field
from enum import Enum
from typing import Callable
import asyncio
import logging
import time

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from errors import ConfigurationError, ContractViolation
from logical_clock import (
    CLIMB_STAGES,
    ELIMINATION_STAGES,
    MIGRATION_STAGES,
    SOMERSAULT_STAGES,
    WATCH_JUMP_STAGES,
    LogicalClock,
    TickModel,
    merge,
)
from monkey_core import (
    JumpTally,
    MaParams,
    MonkeyState,
    RunReport,
    SearchSchedule,
    best_of,
    climb_process,
    random_population,
    somersault,
    watch_jump,
)
from objective import ObjectiveDescriptor, RandomStream, Sense, is_better

logger = logging.getLogger("pmsam.engine")


class Charge(str, Enum):
    POSITIVE = "+"
    NEGATIVE = "-"
    NEUTRAL = "0"


class Decision(str, Enum):
    CONTINUE = "continue"
    STOP_TIME = "stop_time"
    STOP_ITERATIONS = "stop_iterations"
    STOP_FEASIBLE = "stop_feasible"


class PmsamConfig(BaseModel):
    """PMSAM parameters: the MA parameters plus m, the tick budget and the stop target."""

    model_config = ConfigDict(frozen=True)

    ma: MaParams = Field(default_factory=MaParams)
    membranes: int = Field(10, ge=1)
    t_max: int = Field(10_000_000, ge=0)
    target_value: float | None = None
    target_tolerance: float = Field(1e-9, ge=0)
    seed: int = Field(0, ge=0, lt=2**64)


def check_config(config: PmsamConfig) -> PmsamConfig:
    if config.membranes > config.ma.n:
        raise ConfigurationError(
            f"m={config.membranes} exceeds n={config.ma.n}: every membrane needs a monkey",
            key="m",
        )
    return config


@dataclass
class Membrane:
    """
    A local region holding a sub-population. Its charge never changes.

    `local_best` is the best position seen in this membrane during the current
    iteration, including positions its monkeys have since left.
    """

    label: int
    monkeys: list[MonkeyState]
    stream: RandomStream
    clock: LogicalClock
    sense: Sense = Sense.MINIMIZE
    charge: Charge = Charge.NEUTRAL
    local_best: MonkeyState | None = None
    tally: JumpTally = field(default_factory=JumpTally)

    def refresh_best(self) -> MonkeyState:
        """Fold the current population into `local_best`, which never worsens."""
        if not self.monkeys:
            raise ContractViolation(f"membrane {self.label} holds no monkeys")
        best = self.local_best
        for monkey in self.monkeys:
            if best is None or self.sense.score(monkey.value) > self.sense.score(best.value):
                best = monkey
        self.local_best = best
        return best


@dataclass
class PhaseEntry:
    iteration: int
    phase: str
    t: int
    membranes: int


@dataclass
class GlobalRegion:
    """The skin membrane: global population, global best, iteration counter and clock."""

    config: PmsamConfig
    desc: ObjectiveDescriptor
    monkeys: list[MonkeyState]
    global_best: MonkeyState
    clock: LogicalClock
    stream: RandomStream
    schedule: SearchSchedule
    iteration: int = 0
    membranes: list[Membrane] = field(default_factory=list)
    log: list[PhaseEntry] = field(default_factory=list)
    trace: list[tuple[int, float]] = field(default_factory=list)
    decision: Decision = Decision.CONTINUE

    def now(self) -> int:
        return max([self.clock.t] + [m.clock.t for m in self.membranes])

    def note(self, phase: str) -> None:
        entry = PhaseEntry(self.iteration, phase, self.now(), len(self.membranes))
        self.log.append(entry)
        logger.debug(
            f"[Iteration {entry.iteration}] {phase}: t={entry.t} membranes={entry.membranes}"
        )


def membrane_stream(seed: int, iteration: int, label: int) -> RandomStream:
    return np.random.default_rng(np.random.SeedSequence([seed, iteration, label]))


# --- Initialization ---


def initialize(
    desc: ObjectiveDescriptor, config: PmsamConfig, model: TickModel | None = None
) -> GlobalRegion:
    """Evolve n random feasible monkeys in the global region and start the clock at t=0."""
    check_config(config)
    if desc.dimension != config.ma.d:
        raise ConfigurationError(
            f"objective {desc.id} has d={desc.dimension} but config has d={config.ma.d}",
            key="d",
        )
    stream = np.random.default_rng(np.random.SeedSequence(config.seed))
    monkeys = random_population(desc, config.ma.n, stream)
    region = GlobalRegion(
        config=config,
        desc=desc,
        monkeys=monkeys,
        global_best=best_of(desc, monkeys),
        clock=LogicalClock(model=model or TickModel()),
        stream=stream,
        schedule=SearchSchedule.start(desc, config.ma),
    )
    region.note("initialize")
    return region


def compute_threshold(n: int, m: int, clock: LogicalClock | None = None) -> int:
    """Monkeys per local membrane, floor(n / m). Fires the Division stage on `clock`."""
    if m < 1 or m > n:
        raise ConfigurationError(f"need 1 <= m <= n, got n={n}, m={m}", key="m")
    if clock is not None:
        clock.tick("division")
    return n // m


def create_membranes(region: GlobalRegion) -> list[Membrane]:
    if region.membranes:
        raise ContractViolation("membranes can only be created when none is live")
    region.clock.tick("membrane-creation")
    seed, iteration = region.config.seed, region.iteration
    region.membranes = [
        Membrane(
            label=label,
            monkeys=[],
            stream=membrane_stream(seed, iteration, label),
            clock=region.clock.copy(),
            sense=region.desc.sense,
        )
        for label in range(1, region.config.membranes + 1)
    ]
    region.note("membrane-creation")
    return region.membranes


def distribute(region: GlobalRegion, membranes: list[Membrane]) -> list[Membrane]:
    """
    Hand out the global population in index order, th monkeys per membrane; the
    highest label also takes the remainder.
    """
    if any(m.monkeys for m in membranes):
        raise ContractViolation("distribution needs empty membranes")
    n = len(region.monkeys)
    th = compute_threshold(n, len(membranes))
    region.clock.tick("distribution")
    ordered = sorted(membranes, key=lambda m: m.label)
    for index, membrane in enumerate(ordered):
        stop = n if index == len(ordered) - 1 else (index + 1) * th
        membrane.monkeys = list(region.monkeys[index * th : stop])
        membrane.clock = region.clock.copy()
        membrane.refresh_best()
    region.monkeys = []
    region.membranes = ordered
    region.note("distribution")
    return ordered


# --- Local processes ---


async def _fan_out(
    membranes: list[Membrane], work: Callable[[Membrane], Membrane], workers: int
) -> list[Membrane]:
    # One worker per membrane at a time; cross-membrane effects wait for the gather.
    gate = asyncio.Semaphore(max(1, workers))

    async def run_one(membrane: Membrane) -> Membrane:
        async with gate:
            return await asyncio.to_thread(work, membrane)

    return list(await asyncio.gather(*(run_one(m) for m in membranes)))


def climb_membrane(membrane: Membrane, desc: ObjectiveDescriptor, params: MaParams) -> Membrane:
    membrane.monkeys = [
        climb_process(desc, monkey, params, membrane.stream) for monkey in membrane.monkeys
    ]
    width = len(membrane.monkeys)
    for _ in range(params.climb_number):
        membrane.clock.tick_all(CLIMB_STAGES, width)
    membrane.clock.tick("time-elimination", width)
    membrane.refresh_best()
    return membrane


async def parallel_climb(
    membranes: list[Membrane],
    desc: ObjectiveDescriptor,
    params: MaParams,
    workers: int = 1,
) -> list[Membrane]:
    """Climb every membrane concurrently. Each membrane's clock pays one climb pass."""
    return await _fan_out(membranes, lambda m: climb_membrane(m, desc, params), workers)


def migrate(membranes: list[Membrane]) -> list[Membrane]:
    """
    Merge consecutive label pairs into the member with the better local best (ties go
    to the lower label). An odd membrane out passes through unmerged.
    """
    if len(membranes) < 2:
        raise ContractViolation(f"migration needs at least 2 membranes, got {len(membranes)}")
    ordered = sorted(membranes, key=lambda m: m.label)
    survivors: list[Membrane] = []
    for i in range(0, len(ordered), 2):
        pair = ordered[i : i + 2]
        survivor = pair[0]
        if len(pair) == 2:
            low, high = pair
            high_wins = high.sense.score(high.local_best.value) > low.sense.score(
                low.local_best.value
            )
            survivor, absorbed = (high, low) if high_wins else (low, high)
            survivor.monkeys = low.monkeys + high.monkeys
            survivor.clock = merge(survivor.clock, absorbed.clock)
            survivor.tally.absorb(absorbed.tally)
            survivor.refresh_best()
            logger.debug(f"[Membrane {survivor.label}] absorbed membrane {absorbed.label}")
        survivor.clock.tick_all(MIGRATION_STAGES, len(survivor.monkeys))
        survivors.append(survivor)
    return survivors


def watch_jump_round(
    membrane: Membrane, desc: ObjectiveDescriptor, params: MaParams
) -> Membrane:
    membrane.monkeys = [
        watch_jump(desc, monkey, params, membrane.stream, membrane.tally)
        for monkey in membrane.monkeys
    ]
    membrane.clock.tick_all(WATCH_JUMP_STAGES, len(membrane.monkeys))
    membrane.refresh_best()
    return membrane


async def parallel_watch_jump(
    membranes: list[Membrane],
    desc: ObjectiveDescriptor,
    params: MaParams,
    workers: int = 1,
) -> list[Membrane]:
    return await _fan_out(membranes, lambda m: watch_jump_round(m, desc, params), workers)


def _single(membranes: Membrane | list[Membrane], operation: str) -> Membrane:
    if isinstance(membranes, Membrane):
        return membranes
    if len(membranes) != 1:
        raise ContractViolation(
            f"{operation} needs exactly one live membrane, got {len(membranes)}"
        )
    return membranes[0]


def somersault_final(
    membranes: Membrane | list[Membrane], desc: ObjectiveDescriptor, params: MaParams
) -> Membrane:
    """
    Somersault of the whole population once migration has left a single membrane.
    `local_best` keeps the best position seen before the leap.
    """
    membrane = _single(membranes, "somersault")
    membrane.monkeys = somersault(desc, membrane.monkeys, params, membrane.stream)
    membrane.clock.tick_all(SOMERSAULT_STAGES, len(membrane.monkeys))
    membrane.refresh_best()
    return membrane


def eliminate_to_global(
    membranes: Membrane | list[Membrane], region: GlobalRegion
) -> GlobalRegion:
    """
    Dissolve the last membrane into the global region. The global best becomes the
    better of itself and the best position the iteration produced.
    """
    membrane = _single(membranes, "elimination")
    region.monkeys = membrane.monkeys
    incoming = membrane.local_best or membrane.refresh_best()
    if is_better(region.desc, incoming.value, region.global_best.value):
        region.global_best = incoming
    region.clock = merge(region.clock, membrane.clock)
    region.clock.tick_all(ELIMINATION_STAGES)
    region.membranes = []
    region.note("elimination")
    return region


# --- Termination ---


def _target_reached(region: GlobalRegion) -> bool:
    target = region.config.target_value
    if target is None:
        return False
    slack = region.config.target_tolerance
    best = region.global_best.value
    if region.desc.sense is Sense.MINIMIZE:
        return best <= target + slack
    return best >= target - slack


def check_termination(region: GlobalRegion) -> Decision:
    """Stopping criteria, checked in order: tick budget, feasible target, iteration cap."""
    if region.clock.t >= region.config.t_max:
        return Decision.STOP_TIME
    if _target_reached(region):
        return Decision.STOP_FEASIBLE
    if region.iteration >= region.config.ma.cyclic_number:
        return Decision.STOP_ITERATIONS
    return Decision.CONTINUE


def restart(region: GlobalRegion) -> GlobalRegion:
    region.iteration += 1
    return region


# --- Control flow ---


async def execute(
    desc: ObjectiveDescriptor,
    config: PmsamConfig,
    workers: int = 1,
    model: TickModel | None = None,
) -> GlobalRegion:
    """Run the full PMSAM loop and return the final global region."""
    region = initialize(desc, config, model)
    decision = check_termination(region)

    while decision is Decision.CONTINUE:
        restart(region)
        params = region.schedule.sweep(region.iteration)
        compute_threshold(len(region.monkeys), config.membranes, region.clock)
        region.note("division")
        membranes = distribute(region, create_membranes(region))

        membranes = await parallel_climb(membranes, desc, params, workers)
        region.note("climb")
        while len(membranes) > 1:
            membranes = migrate(membranes)
            region.membranes = membranes
            region.note("migrate")
            membranes = await parallel_watch_jump(membranes, desc, params, workers)
            region.note("watch-jump")
            membranes = await parallel_climb(membranes, desc, params, workers)
            region.note("climb")

        somersault_final(membranes, desc, params)
        region.note("somersault")
        tally = membranes[0].tally
        eliminate_to_global(membranes, region)
        region.schedule.adapt(tally)
        region.trace.append((region.iteration, region.global_best.value))
        logger.info(
            f"[Run {desc.id}:pmsam:seed={config.seed}] iteration {region.iteration}: "
            f"best={region.global_best.value:.6g} t={region.clock.t}"
        )
        decision = check_termination(region)

    if decision is Decision.STOP_TIME:
        logger.warning(
            f"[Run {desc.id}:pmsam:seed={config.seed}] tick budget t_max={config.t_max} "
            f"exhausted after {region.iteration} iterations"
        )
    region.decision = decision
    return region


async def run_pmsam(
    desc: ObjectiveDescriptor,
    config: PmsamConfig,
    workers: int = 1,
    model: TickModel | None = None,
) -> RunReport:
    started = time.perf_counter()
    region = await execute(desc, config, workers, model)
    wall = time.perf_counter() - started
    logger.info(
        f"[Run {desc.id}:pmsam:seed={config.seed}] finished ({region.decision.value}): "
        f"best={region.global_best.value:.6g} ticks={region.clock.t} in {wall:.2f}s"
    )
    return RunReport(
        function_id=desc.id,
        algorithm="pmsam",
        seed=config.seed,
        best_value=region.global_best.value,
        best_position=region.global_best.position.tolist(),
        iterations_used=region.iteration,
        ticks=region.clock.t,
        wall_seconds=wall,
        trace=list(region.trace),
        ledger=dict(region.clock.ledger),
        stop_reason=region.decision.value,
    )
