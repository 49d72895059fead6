"""Ensure the shared test helpers in this directory are importable."""
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))
