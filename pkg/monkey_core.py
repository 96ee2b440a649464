from dataclasses import dataclass
import logging
import time

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from errors import ContractViolation
from logical_clock import (
    CLIMB_STAGES,
    SOMERSAULT_STAGES,
    WATCH_JUMP_STAGES,
    LogicalClock,
    TickModel,
)
from objective import (
    ObjectiveDescriptor,
    Position,
    RandomStream,
    Sense,
    evaluate,
    is_better,
    is_feasible,
    score,
)

logger = logging.getLogger("pmsam.monkey")


class MaParams(BaseModel):
    """
    Monkey Algorithm parameters. `step_length` is the climb step a, `climb_number` is P_c.

    `success_target` and `somersault_shrink` drive the per-sweep schedule (see
    SearchSchedule); 0 and 1 keep the eyesight and somersault interval fixed.
    """

    model_config = ConfigDict(frozen=True)

    n: int = Field(60, ge=1)
    d: int = Field(30, ge=1)
    step_length: float = Field(1e-4, gt=0)
    eyesight: float = Field(1.0, ge=0)
    somersault_lo: float = -1.0
    somersault_hi: float = 1.0
    climb_number: int = Field(50, ge=0)
    cyclic_number: int = Field(20, ge=0)
    climb_epsilon: float = Field(1e-9, ge=0)
    max_resample: int = Field(100, ge=1)
    success_target: float = Field(0.03, ge=0, lt=1)
    somersault_shrink: float = Field(0.25, gt=0, le=1)

    @field_validator("somersault_hi")
    @classmethod
    def _interval_not_empty(cls, hi: float, info) -> float:
        lo = info.data.get("somersault_lo")
        if lo is not None and not lo < hi:
            raise ValueError(f"somersault interval [{lo}, {hi}] is empty")
        return hi


@dataclass(frozen=True)
class MonkeyState:
    position: np.ndarray
    value: float


class RunReport(BaseModel):
    """Outcome of one seeded optimizer run."""

    function_id: str
    algorithm: str
    seed: int
    best_value: float
    best_position: list[float]
    iterations_used: int
    ticks: int
    wall_seconds: float = 0.0
    trace: list[tuple[int, float]] = Field(default_factory=list)
    ledger: dict[str, int] = Field(default_factory=dict)
    stop_reason: str = "stop_iterations"


def sign(x: float) -> int:
    if x > 0:
        return 1
    if x < 0:
        return -1
    return 0


def generate_climb_perturbation(rng: RandomStream, d: int, a: float) -> Position:
    """Each coordinate is +a or -a with probability 1/2."""
    heads = np.asarray(rng.random(d)) < 0.5
    return np.where(heads, a, -a).astype(float)


def pseudo_gradient(
    desc: ObjectiveDescriptor, p: Position, dp: Position, rng: RandomStream | None = None
) -> Position:
    """Symmetric difference quotient (f(p + dp) - f(p - dp)) / (2 dp_j) on the raw objective."""
    p = np.asarray(p, dtype=float)
    dp = np.asarray(dp, dtype=float)
    if np.any(dp == 0):
        raise ContractViolation("pseudo-gradient needs a perturbation with no zero component")
    rise = evaluate(desc, p + dp, rng) - evaluate(desc, p - dp, rng)
    return rise / (2.0 * dp)


def _ascent(desc: ObjectiveDescriptor) -> float:
    # Steps follow the score gradient; minimization flips the objective's sign.
    return 1.0 if desc.sense is Sense.MAXIMIZE else -1.0


def climb_process(
    desc: ObjectiveDescriptor, monkey: MonkeyState, params: MaParams, rng: RandomStream
) -> MonkeyState:
    """
    Local climb: up to `climb_number` sign steps along the pseudo-gradient. A candidate
    replaces the current position when it is feasible and does not lower the score;
    the climb stops once a candidate changes the score by less than `climb_epsilon`.
    """
    current = monkey
    direction = _ascent(desc)
    a = params.step_length
    for _ in range(params.climb_number):
        dp = generate_climb_perturbation(rng, desc.dimension, a)
        g = pseudo_gradient(desc, current.position, dp, rng)
        y = current.position + a * direction * np.sign(g)
        if not is_feasible(desc, y):
            continue
        value = evaluate(desc, y, rng)
        delta = score(desc, value) - score(desc, current.value)
        if delta >= 0:
            current = MonkeyState(y, value)
        if abs(delta) < params.climb_epsilon:
            break
    return current


@dataclass
class JumpTally:
    """Watch-jump draws and accepted jumps over one sweep."""

    draws: int = 0
    jumps: int = 0

    def absorb(self, other: "JumpTally") -> None:
        self.draws += other.draws
        self.jumps += other.jumps


def watch_jump(
    desc: ObjectiveDescriptor,
    monkey: MonkeyState,
    params: MaParams,
    rng: RandomStream,
    tally: JumpTally | None = None,
) -> MonkeyState:
    """Look around within the eyesight and jump to the first feasible, strictly better point."""
    p = monkey.position
    b = params.eyesight
    for _ in range(params.max_resample):
        y = np.asarray(rng.uniform(p - b, p + b), dtype=float)
        if tally is not None:
            tally.draws += 1
        if not is_feasible(desc, y):
            continue
        value = evaluate(desc, y, rng)
        if is_better(desc, value, monkey.value):
            if tally is not None:
                tally.jumps += 1
            return MonkeyState(y, value)
    return monkey


def somersault_pivot(monkeys: list[MonkeyState]) -> Position:
    if not monkeys:
        raise ContractViolation("somersault pivot of an empty population")
    return np.mean(np.stack([m.position for m in monkeys]), axis=0)


def somersault(
    desc: ObjectiveDescriptor, monkeys: list[MonkeyState], params: MaParams, rng: RandomStream
) -> list[MonkeyState]:
    """Every monkey leaps along the line through the pivot: y = p + alpha * (pivot - p)."""
    pivot = somersault_pivot(monkeys)
    moved: list[MonkeyState] = []
    for monkey in monkeys:
        landed = monkey
        for _ in range(params.max_resample):
            alpha = float(rng.uniform(params.somersault_lo, params.somersault_hi))
            y = monkey.position + alpha * (pivot - monkey.position)
            if is_feasible(desc, y):
                landed = MonkeyState(y, evaluate(desc, y, rng))
                break
        else:
            logger.warning(
                f"Somersault found no feasible landing in {params.max_resample} draws, monkey stays"
            )
        moved.append(landed)
    return moved


def random_population(desc: ObjectiveDescriptor, n: int, rng: RandomStream) -> list[MonkeyState]:
    positions = rng.uniform(desc.lower, desc.upper, size=(n, desc.dimension))
    return [MonkeyState(row.copy(), evaluate(desc, row, rng)) for row in positions]


def best_of(desc: ObjectiveDescriptor, monkeys: list[MonkeyState]) -> MonkeyState:
    if not monkeys:
        raise ContractViolation("best of an empty population")
    best = monkeys[0]
    for monkey in monkeys[1:]:
        if is_better(desc, monkey.value, best.value):
            best = monkey
    return best


def keep_better(
    desc: ObjectiveDescriptor, best: MonkeyState, monkeys: list[MonkeyState]
) -> MonkeyState:
    candidate = best_of(desc, monkeys)
    return candidate if is_better(desc, candidate.value, best.value) else best


# Bounds on the per-sweep eyesight factor.
EYESIGHT_FACTOR_RANGE = (0.25, 4.0)


@dataclass
class SearchSchedule:
    """
    Eyesight and somersault interval of each sweep (a PMSAM iteration or an MA cycle).

    With `success_target` > 0 the first sweep looks `eyesight` times the spread of a
    uniform population over the box, (upper - lower) / sqrt(12), and every later sweep
    rescales the eyesight by (observed jump rate / target) ** 1/4. The somersault
    interval keeps its upper end and its width shrinks by `somersault_shrink` per sweep.
    """

    params: MaParams
    eyesight: float

    @classmethod
    def start(cls, desc: ObjectiveDescriptor, params: MaParams) -> "SearchSchedule":
        eyesight = params.eyesight
        if params.success_target > 0:
            eyesight *= (desc.upper - desc.lower) / np.sqrt(12.0)
        return cls(params=params, eyesight=float(eyesight))

    def sweep(self, index: int) -> MaParams:
        """Parameters for sweep `index`, counted from 1."""
        p = self.params
        width = (p.somersault_hi - p.somersault_lo) * p.somersault_shrink ** (index - 1)
        return p.model_copy(
            update={"eyesight": self.eyesight, "somersault_lo": p.somersault_hi - width}
        )

    def adapt(self, tally: JumpTally) -> float:
        target = self.params.success_target
        if target == 0 or tally.draws == 0:
            return self.eyesight
        rate = (tally.jumps + 0.5) / (tally.draws + 1)
        factor = float(np.clip((rate / target) ** 0.25, *EYESIGHT_FACTOR_RANGE))
        self.eyesight *= factor
        logger.debug(
            f"Jump rate {tally.jumps}/{tally.draws}: eyesight x{factor:.3f} -> {self.eyesight:.6g}"
        )
        return self.eyesight


def _charge(clock: LogicalClock, stages: tuple[str, ...], times: int) -> None:
    for _ in range(times):
        clock.tick_all(stages)


def run_ma(
    desc: ObjectiveDescriptor,
    params: MaParams,
    seed: int,
    model: TickModel | None = None,
) -> RunReport:
    """
    Sequential Monkey Algorithm baseline. Each cycle applies climb, watch-jump, climb
    and somersault to the monkeys in index order; every stage costs its ticks once
    per monkey. The best position seen after any stage is kept.
    """
    started = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    clock = LogicalClock(model=model or TickModel())
    schedule = SearchSchedule.start(desc, params)
    tag = f"[Run {desc.id}:ma:seed={seed}]"

    monkeys = random_population(desc, params.n, rng)
    best = best_of(desc, monkeys)
    trace: list[tuple[int, float]] = []

    for cycle in range(1, params.cyclic_number + 1):
        sweep = schedule.sweep(cycle)
        tally = JumpTally()
        monkeys = [climb_process(desc, m, sweep, rng) for m in monkeys]
        _charge(clock, CLIMB_STAGES, params.n * params.climb_number)
        best = keep_better(desc, best, monkeys)
        monkeys = [watch_jump(desc, m, sweep, rng, tally) for m in monkeys]
        _charge(clock, WATCH_JUMP_STAGES, params.n)
        best = keep_better(desc, best, monkeys)
        monkeys = [climb_process(desc, m, sweep, rng) for m in monkeys]
        _charge(clock, CLIMB_STAGES, params.n * params.climb_number)
        best = keep_better(desc, best, monkeys)
        monkeys = somersault(desc, monkeys, sweep, rng)
        _charge(clock, SOMERSAULT_STAGES, params.n)
        best = keep_better(desc, best, monkeys)

        schedule.adapt(tally)
        trace.append((cycle, best.value))
        logger.debug(f"{tag} cycle {cycle}: best={best.value:.6g} t={clock.t}")

    wall = time.perf_counter() - started
    logger.info(f"{tag} finished: best={best.value:.6g} ticks={clock.t} in {wall:.2f}s")
    return RunReport(
        function_id=desc.id,
        algorithm="ma",
        seed=seed,
        best_value=best.value,
        best_position=best.position.tolist(),
        iterations_used=params.cyclic_number,
        ticks=clock.t,
        wall_seconds=wall,
        trace=trace,
        ledger=dict(clock.ledger),
    )
