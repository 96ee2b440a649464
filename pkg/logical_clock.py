from dataclasses import dataclass, field
import logging
from typing import TYPE_CHECKING

from pydantic import BaseModel, Field, field_validator

from errors import ContractViolation

if TYPE_CHECKING:
    from monkey_core import MaParams

logger = logging.getLogger("pmsam.clock")

SETUP_STAGES = ("division", "membrane-creation", "distribution")
CLIMB_STAGES = (
    "climb-perturb",
    "random-injection",
    "objective-breakdown",
    "gradient",
    "sign",
    "update",
    "check",
)
MIGRATION_STAGES = ("migrate", "time-updating")
WATCH_JUMP_STAGES = ("jump-update", "jump-objective", "jump-compare")
SOMERSAULT_STAGES = ("pivot", "pivot-process", "alfa", "new-position", "feasibility-check")
ELIMINATION_STAGES = ("solution-elimination", "comparison")

# Setup runs t: 0 -> 1 -> 2 -> 3; the first climb iteration then reads 4, 5, 7, 8, 11, 12, 14.
DEFAULT_TICKS: dict[str, int] = {
    "division": 1,
    "membrane-creation": 1,
    "distribution": 1,
    "climb-perturb": 1,
    "random-injection": 1,
    "objective-breakdown": 2,
    "gradient": 1,
    "sign": 3,
    "update": 1,
    "check": 2,
    "time-elimination": 1,
    "migrate": 1,
    "time-updating": 1,
    "jump-update": 1,
    "jump-objective": 1,
    "jump-compare": 1,
    "pivot": 2,
    "pivot-process": 1,
    "alfa": 1,
    "new-position": 1,
    "feasibility-check": 1,
    "solution-elimination": 1,
    "comparison": 1,
}


class TickModel(BaseModel):
    """Logical cost, in ticks, of firing each engine stage once."""

    ticks_per_stage: dict[str, int] = Field(default_factory=lambda: dict(DEFAULT_TICKS))

    @field_validator("ticks_per_stage")
    @classmethod
    def _complete_and_positive(cls, value: dict[str, int]) -> dict[str, int]:
        missing = sorted(set(DEFAULT_TICKS) - set(value))
        if missing:
            raise ValueError(f"missing stage costs: {', '.join(missing)}")
        bad = sorted(stage for stage, cost in value.items() if cost < 1)
        if bad:
            raise ValueError(f"stage costs must be positive: {', '.join(bad)}")
        return value

    @classmethod
    def uniform(cls, cost: int = 1) -> "TickModel":
        return cls(ticks_per_stage={stage: cost for stage in DEFAULT_TICKS})

    def cost(self, stage: str) -> int:
        try:
            return self.ticks_per_stage[stage]
        except KeyError:
            raise ContractViolation(f"Unknown clock stage: {stage}") from None

    def sum(self, stages: tuple[str, ...]) -> int:
        return sum(self.cost(stage) for stage in stages)


@dataclass
class LogicalClock:
    """
    Timestamp object T^t. One maximally parallel firing of a stage costs the
    stage's ticks no matter how many membranes or monkeys fire it.
    """

    model: TickModel = field(default_factory=TickModel)
    t: int = 0
    ledger: dict[str, int] = field(default_factory=dict)
    record: bool = False
    history: list[tuple[str, int]] = field(default_factory=list)

    def tick(self, stage: str, parallel_width: int = 1) -> "LogicalClock":
        if parallel_width < 1:
            raise ContractViolation(f"parallel width must be >= 1, got {parallel_width}")
        cost = self.model.cost(stage)
        self.t += cost
        self.ledger[stage] = self.ledger.get(stage, 0) + cost
        if self.record:
            self.history.append((stage, self.t))
        return self

    def tick_all(self, stages: tuple[str, ...], parallel_width: int = 1) -> "LogicalClock":
        for stage in stages:
            self.tick(stage, parallel_width)
        return self

    def copy(self) -> "LogicalClock":
        return LogicalClock(
            model=self.model,
            t=self.t,
            ledger=dict(self.ledger),
            record=self.record,
            history=list(self.history),
        )


def tick(clock: LogicalClock, stage: str, parallel_width: int = 1) -> LogicalClock:
    return clock.tick(stage, parallel_width)


def merge(global_clock: LogicalClock, local_clock: LogicalClock) -> LogicalClock:
    """
    Reconcile a local timestamp with the global one: the later clock wins, ties keep
    the global clock. Local clocks start as copies of the global, so the winner's
    ledger already accounts for every tick before the split.
    """
    winner = local_clock if local_clock.t > global_clock.t else global_clock
    logger.debug(f"Merged clocks at t={global_clock.t} and t={local_clock.t}")
    return winner.copy()


# --- Closed forms ---


def climb_pass_ticks(params: "MaParams", model: TickModel) -> int:
    """One climb pass of a membrane: P_c iterations of the climb stages."""
    return params.climb_number * model.sum(CLIMB_STAGES)


def pmsam_phase_ticks(n: int, m: int, params: "MaParams", model: TickModel) -> dict[str, int]:
    """Ticks of one PMSAM outer iteration, by phase. Independent of n."""
    if not n >= m >= 1:
        raise ContractViolation(f"need n >= m >= 1, got n={n}, m={m}")
    rounds = migration_rounds(m)
    climb = climb_pass_ticks(params, model) + model.cost("time-elimination")
    return {
        "setup": model.sum(SETUP_STAGES),
        "climb": climb,
        "migration": rounds * (model.sum(MIGRATION_STAGES) + climb),
        "watch_jump": rounds * model.sum(WATCH_JUMP_STAGES),
        "somersault": model.sum(SOMERSAULT_STAGES),
        "elimination": model.sum(ELIMINATION_STAGES),
    }


def pmsam_ticks(
    n: int, m: int, params: "MaParams", model: TickModel, iterations: int = 1
) -> int:
    return iterations * sum(pmsam_phase_ticks(n, m, params, model).values())


def ma_phase_ticks(n: int, params: "MaParams", model: TickModel) -> dict[str, int]:
    """
    Ticks of one sequential MA cycle, by phase: every stage is paid once per monkey.
    The cycle runs climb, watch-jump, climb, somersault.
    """
    return {
        "setup": 0,
        "climb": n * 2 * climb_pass_ticks(params, model),
        "migration": 0,
        "watch_jump": n * model.sum(WATCH_JUMP_STAGES),
        "somersault": n * model.sum(SOMERSAULT_STAGES),
        "elimination": 0,
    }


def ma_ticks(n: int, params: "MaParams", model: TickModel, iterations: int = 1) -> int:
    return iterations * sum(ma_phase_ticks(n, params, model).values())


def migration_rounds(m: int) -> int:
    """Pairwise merges needed to reduce m membranes to one."""
    return (m - 1).bit_length()
