"""
Shared fixtures for the workbench tests
"""

import os
import sys

import pytest

# Add the project root to Python path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from tools.config import reset_settings  # noqa: E402
from tools.lattice_resonance import TangentialSet  # noqa: E402
from tools.normal_form import Parameters  # noqa: E402

DESK_SITES = ((1, 0), (0, 1))
DESK_XI = (1.0, 1.5)
DESK_EPS = 0.1
DESK_MODE_BOUND = 2


@pytest.fixture(autouse=True)
def isolated_dirs(tmp_path, monkeypatch):
    """Logs, reports and the divisor ledger go to a per-test directory"""
    monkeypatch.setenv("WORKBENCH_LOG_DIR", str(tmp_path / "logs"))
    monkeypatch.setenv("WORKBENCH_OUTPUT_DIR", str(tmp_path / "reports"))
    reset_settings()
    from debug_tools.divisor_debugger import divisor_debugger
    monkeypatch.setattr(divisor_debugger, "log_file", str(tmp_path / "logs" / "divisor_debug.jsonl"))
    yield
    reset_settings()


@pytest.fixture
def desk_set():
    return TangentialSet(DESK_SITES)


@pytest.fixture
def desk_params():
    return Parameters(DESK_XI, DESK_EPS)


@pytest.fixture(scope="session")
def desk_normal_form():
    """(state, P) on the desk instance; built once per session"""
    from tools.normal_form import build_normal_form

    return build_normal_form(Parameters(DESK_XI, DESK_EPS), TangentialSet(DESK_SITES), DESK_MODE_BOUND, 4)
