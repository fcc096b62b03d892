import sys
from pathlib import Path

# tests import shared oracles from sibling test modules
sys.path.insert(0, str(Path(__file__).parent))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full training runs (minutes per seed)")
