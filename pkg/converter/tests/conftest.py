import sys
from pathlib import Path

# the primary package validates converted containers; prefer the installed
# copy but fall back to the sibling source tree
try:
    import mmfuse  # noqa: F401
except ImportError:
    sys.path.insert(0, str(Path(__file__).resolve().parents[2] / "src"))
