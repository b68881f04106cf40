"""Package version, kept in the ``VERSION`` file next to this module."""
from pathlib import Path

VERSION_FILE = Path(__file__).with_name("VERSION")


def read_version(path: Path = VERSION_FILE) -> str:
    """Release string such as ``0.1.0`` or ``0.2.0rc1``."""
    return path.read_text(encoding="utf-8").strip()


__version__ = read_version()
