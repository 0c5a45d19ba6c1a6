import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from meshseg.volume import Volume3D, identity_affine


@pytest.fixture
def rng():
    return np.random.default_rng(20230521)


def make_volume(data, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    return Volume3D(np.asarray(data), spacing, identity_affine(spacing, origin))
