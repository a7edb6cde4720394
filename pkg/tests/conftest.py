import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from support import DEMO_TRANSCRIPTS  # noqa: E402


@pytest.fixture
def demo_transcripts() -> Path:
    return DEMO_TRANSCRIPTS


@pytest.fixture
def home(tmp_path) -> Path:
    return tmp_path / "home"
