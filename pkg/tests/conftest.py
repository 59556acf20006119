import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sublab import get_group  # noqa: E402

CATALOG = ("heisenberg", "engel", "free23", "euclidean2", "euclidean3")


@pytest.fixture(params=CATALOG)
def any_group(request):
    return get_group(request.param)


@pytest.fixture
def heis():
    return get_group("heisenberg")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
