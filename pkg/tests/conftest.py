import pathlib
import sys

# Tests import shared helpers (oracles.py) as plain modules from this directory.
sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent))
