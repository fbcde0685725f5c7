import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def basis():
    from flowbundle.patch_core import dct_basis
    return dct_basis()


@pytest.fixture()
def rng():
    return np.random.default_rng(20240517)
