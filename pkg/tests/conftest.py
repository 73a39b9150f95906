from functools import lru_cache

import pytest

from tfade.soe import build_soe


@pytest.fixture(scope="session")
def soe_cache():
    """Memoized build_soe: construction is deterministic and tests share it."""

    @lru_cache(maxsize=None)
    def get(alpha, epsilon, t_min, t_max):
        return build_soe(alpha, epsilon, t_min, t_max)

    return get
