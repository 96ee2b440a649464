import pytest
import numpy as np
from unittest.mock import MagicMock

from logical_clock import TickModel
from membrane_engine import PmsamConfig
from monkey_core import MaParams
from objective import get_objective


@pytest.fixture
def small_params():
    return MaParams(n=20, d=5, step_length=1e-2, climb_number=5, cyclic_number=2)


@pytest.fixture
def tiny_config(small_params):
    return PmsamConfig(ma=small_params, membranes=4, seed=7)


@pytest.fixture
def sphere5():
    return get_objective("f1", 5)


@pytest.fixture
def tick_model():
    return TickModel()


@pytest.fixture
def fixed_stream():
    """Build a MagicMock random stream whose draws are pinned."""

    def factory(uniform=None, random=None):
        stream = MagicMock()
        if uniform is not None:
            stream.uniform.return_value = uniform
        if random is not None:
            stream.random.return_value = np.asarray(random, dtype=float)
        return stream

    return factory
