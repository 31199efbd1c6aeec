import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(autouse=True)
def _quiet_numpy():
    import numpy as np
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        yield
