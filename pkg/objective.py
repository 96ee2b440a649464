from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable
import logging

import numpy as np

from errors import ConfigurationError, ContractViolation

logger = logging.getLogger("pmsam.objective")

Position = np.ndarray
RandomStream = np.random.Generator


class Sense(str, Enum):
    MINIMIZE = "minimize"
    MAXIMIZE = "maximize"

    def score(self, value: float) -> float:
        """Internal score that the engine maximizes."""
        return -value if self is Sense.MINIMIZE else value


@dataclass(frozen=True)
class ObjectiveDescriptor:
    """
    A benchmark or user objective over a closed box [lower, upper]^dimension.

    `fn` receives a float64 vector and returns the noise-free value. Stochastic
    objectives get a uniform[0, 1] term added by `evaluate`.
    """

    id: str
    dimension: int
    lower: float
    upper: float
    known_min: float
    fn: Callable[[np.ndarray], float] = field(repr=False, compare=False)
    name: str = ""
    stochastic: bool = False
    sense: Sense = Sense.MINIMIZE

    def __post_init__(self):
        if self.dimension < 1:
            raise ConfigurationError(
                f"Objective {self.id} needs a positive dimension, got {self.dimension}",
                key="d",
            )
        if not self.lower < self.upper:
            raise ConfigurationError(
                f"Objective {self.id} has an empty box [{self.lower}, {self.upper}]",
                key="function",
            )


# --- Table of built-in test functions ---


def _sphere(x: np.ndarray) -> float:
    return float(np.sum(x * x))


def _max_abs(x: np.ndarray) -> float:
    return float(np.max(np.abs(x)))


def _double_sum(x: np.ndarray) -> float:
    return float(np.sum(np.cumsum(x) ** 2))


def _rastrigin(x: np.ndarray) -> float:
    return float(np.sum(x * x - 10.0 * np.cos(2.0 * np.pi * x) + 10.0))


def _quartic(x: np.ndarray) -> float:
    i = np.arange(1, x.size + 1)
    return float(np.sum(i * x**4))


def _schwefel(x: np.ndarray) -> float:
    return float(np.sum(-x * np.sin(np.sqrt(np.abs(x)))))


def _griewank(x: np.ndarray) -> float:
    i = np.arange(1, x.size + 1)
    return float(np.sum(x * x) / 4000.0 - np.prod(np.cos(x / np.sqrt(i))) + 1.0)


def _rosenbrock(x: np.ndarray) -> float:
    head, tail = x[:-1], x[1:]
    return float(np.sum(100.0 * (head * head - tail) ** 2 + (head - 1.0) ** 2))


def _abs_sum_prod(x: np.ndarray) -> float:
    a = np.abs(x)
    return float(np.sum(a) + np.prod(a))


# Exponent of the Michalewicz steepness term; unrelated to the membrane count.
MICHALEWICZ_STEEPNESS = 10


def _michalewicz(x: np.ndarray) -> float:
    i = np.arange(1, x.size + 1)
    return float(
        -np.sum(np.sin(x) * np.sin(i * x * x / np.pi) ** (2 * MICHALEWICZ_STEEPNESS))
    )


def _ackley(x: np.ndarray) -> float:
    # The cosine term has coefficient 1 so that f(0) == 0.
    d = x.size
    rms = np.sqrt(np.sum(x * x) / d)
    mean_cos = np.sum(np.cos(2.0 * np.pi * x)) / d
    return float(-20.0 * np.exp(-0.2 * rms) - np.exp(mean_cos) + 20.0 + np.e)


def _sine_envelope(x: np.ndarray) -> float:
    sin2 = np.sum(np.sin(x) ** 2)
    return float(
        (sin2 - np.exp(-np.sum(x * x))) * np.exp(-np.sum(np.sin(np.sqrt(np.abs(x))) ** 2))
    )


DEFAULT_DIMENSION = 30

# id, name, fn, lower, upper, known_min per dimension (callable), stochastic
_BUILTINS: list[tuple[str, str, Callable, float, float, Callable[[int], float], bool]] = [
    ("f1", "sphere", _sphere, -100.0, 100.0, lambda d: 0.0, False),
    ("f2", "max-abs", _max_abs, -100.0, 100.0, lambda d: 0.0, False),
    ("f3", "double-sum", _double_sum, -100.0, 100.0, lambda d: 0.0, False),
    ("f4", "rastrigin", _rastrigin, -5.12, 5.12, lambda d: 0.0, False),
    ("f5", "noisy-quartic", _quartic, -1.28, 1.28, lambda d: 0.0, True),
    ("f6", "schwefel", _schwefel, -500.0, 500.0, lambda d: -418.883 * d, False),
    ("f7", "griewank", _griewank, -600.0, 600.0, lambda d: 0.0, False),
    ("f8", "rosenbrock", _rosenbrock, -5.0, 10.0, lambda d: 0.0, False),
    ("f9", "abs-sum-prod", _abs_sum_prod, -10.0, 10.0, lambda d: 0.0, False),
    ("f10", "michalewicz", _michalewicz, 0.0, float(np.pi), lambda d: -4.687, False),
    ("f11", "ackley", _ackley, -32.0, 32.0, lambda d: 0.0, False),
    ("f12", "sine-envelope", _sine_envelope, -10.0, 10.0, lambda d: -1.0, False),
]

BUILTIN_IDS = tuple(row[0] for row in _BUILTINS)

_registry: dict[str, ObjectiveDescriptor] = {}


def _builtin(row, dimension: int) -> ObjectiveDescriptor:
    fid, name, fn, lower, upper, known_min, stochastic = row
    return ObjectiveDescriptor(
        id=fid,
        name=name,
        dimension=dimension,
        lower=lower,
        upper=upper,
        known_min=known_min(dimension),
        fn=fn,
        stochastic=stochastic,
    )


def builtin_suite(dimension: int = DEFAULT_DIMENSION) -> list[ObjectiveDescriptor]:
    """The twelve test functions f1..f12 at the given dimension, in id order."""
    return [_builtin(row, dimension) for row in _BUILTINS]


def _normalize(function_id: str) -> str:
    return function_id.strip().lower()


def register(desc: ObjectiveDescriptor) -> ObjectiveDescriptor:
    """Register a programmatic custom objective under its id, matched case-insensitively."""
    key = _normalize(desc.id)
    if key in BUILTIN_IDS:
        raise ConfigurationError(
            f"Cannot replace built-in objective {desc.id}", key="function"
        )
    _registry[key] = desc
    logger.info(f"Registered objective {desc.id} (d={desc.dimension})")
    return desc


def unregister(function_id: str) -> None:
    _registry.pop(_normalize(function_id), None)


def known_ids() -> list[str]:
    return list(BUILTIN_IDS) + sorted(_registry)


def get_objective(function_id: str, dimension: int | None = None) -> ObjectiveDescriptor:
    """Resolve a function id, rebuilding the descriptor at `dimension` when given."""
    fid = _normalize(function_id)
    for row in _BUILTINS:
        if row[0] == fid:
            return _builtin(row, dimension or DEFAULT_DIMENSION)
    desc = _registry.get(fid)
    if desc is None:
        raise ConfigurationError(f"Unknown function id: {function_id}", key="function")
    if dimension and dimension != desc.dimension:
        desc = replace(desc, dimension=dimension)
    return desc


def _check_point(desc: ObjectiveDescriptor, p: Position) -> np.ndarray:
    x = np.asarray(p, dtype=float)
    if x.ndim != 1 or x.size != desc.dimension:
        raise ContractViolation(
            f"{desc.id} expects a point of dimension {desc.dimension}, got shape {x.shape}"
        )
    return x


def evaluate(desc: ObjectiveDescriptor, p: Position, rng: RandomStream | None = None) -> float:
    """
    Objective value at p. For stochastic objectives a uniform[0, 1] term is drawn
    from `rng` once per call; with no stream the term is 0.
    """
    x = _check_point(desc, p)
    if not np.all(np.isfinite(x)):
        raise ContractViolation(f"{desc.id} cannot be evaluated at a non-finite point")
    value = desc.fn(x)
    if desc.stochastic and rng is not None:
        value += float(rng.uniform(0.0, 1.0))
    return value


def is_feasible(desc: ObjectiveDescriptor, p: Position) -> bool:
    x = _check_point(desc, p)
    return bool(np.all((x >= desc.lower) & (x <= desc.upper)))


def score(desc: ObjectiveDescriptor, value: float) -> float:
    return desc.sense.score(value)


def is_better(desc: ObjectiveDescriptor, a: float, b: float) -> bool:
    """True when value `a` is strictly better than `b` in the descriptor's sense."""
    return score(desc, a) > score(desc, b)
