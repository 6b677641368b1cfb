import sys
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from qcsdp.games import chsh, random_game  # noqa: E402
from qcsdp.rounding import rounding_pipeline  # noqa: E402
from qcsdp.solver import solve_game  # noqa: E402
from qcsdp.suites import philox  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# random 2x2 binary games whose classical value is below one
RANDOM_GAME_SEEDS = (6, 14)


def random_binary_game(seed: int):
    return random_game(philox(seed))


GAMES = {"chsh": chsh, **{f"random{s}": (lambda s=s: random_binary_game(s))
                          for s in RANDOM_GAME_SEEDS}}


@lru_cache(maxsize=None)
def solved(name: str, n: int):
    return solve_game(GAMES[name](), n)


@lru_cache(maxsize=None)
def rounded(name: str, n: int):
    return rounding_pipeline(solved(name, n))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
