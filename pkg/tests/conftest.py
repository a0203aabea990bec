import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from support import MAPS_DIR, fixture_checkpoint  # noqa: E402


@pytest.fixture(scope="session")
def ckpt():
    return fixture_checkpoint()


@pytest.fixture(scope="session")
def snomed_tables():
    from medcoder.service import SnomedTables

    return SnomedTables(MAPS_DIR)
