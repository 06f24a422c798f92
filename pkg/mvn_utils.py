import dataclasses
import datetime
import inspect
import json
import logging
import os
import sys

from typing import Any, NamedTuple, Optional

THIS_FILE = os.path.abspath(inspect.getsourcefile(lambda: None) or __file__)
THIS_DIR = os.path.dirname(THIS_FILE)

if THIS_DIR not in sys.path:
    sys.path.append(THIS_DIR)

import numpy as np

LOG_FORMAT = "[%(asctime)s] [%(levelname)s] %(name)s: %(message)s"

###############################################################################
# Functions
###############################################################################


def is_ipython():
    try:
        __IPYTHON__  # type: ignore
    except NameError:
        return False
    return True


def setup_logging(verbosity: int = 0):
    """Configure the root logger once; 0 -> WARNING, 1 -> INFO, 2+ -> DEBUG"""
    if verbosity >= 2:
        level = logging.DEBUG
    elif verbosity == 1:
        level = logging.INFO
    else:
        level = logging.WARNING
    root = logging.getLogger()
    if not root.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)
    root.setLevel(level)


def max_norm(values) -> float:
    values = np.asarray(values)
    if values.size == 0:
        return 0.0
    return float(np.max(np.abs(values)))


def rel_max_norm(residual, *references) -> float:
    """max|residual| divided by the largest max-norm of the references

    0/0 is reported as 0 (an identically vanishing identity is satisfied).
    """
    num = max_norm(residual)
    den = max((max_norm(r) for r in references), default=0.0)
    if den == 0.0:
        return 0.0 if num == 0.0 else float("inf")
    return num / den


def format_elapsed(elapsed: datetime.timedelta) -> str:
    return f"{elapsed.total_seconds():.3f}s"


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _json_default(obj):
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json_record(path: str, record: Any):
    dirname = os.path.dirname(path)
    if dirname:
        ensure_dir(dirname)
    with open(path, "w", encoding="utf8") as f:
        json.dump(record, f, indent=4, sort_keys=True, default=_json_default)
        f.write("\n")


###############################################################################
# Classes
###############################################################################


class GridIndex(NamedTuple):
    """A sample index (i along x, j along y) on a chart"""

    i: int
    j: int

    def __str__(self):
        return f"{self.i},{self.j}"

    @classmethod
    def from_str(cls, index_str: str) -> "GridIndex":
        split = index_str.split(",")
        if len(split) != 2:
            raise ValueError(f"grid index must be given as i,j - got: {index_str}")
        return cls(*(int(x) for x in split))


class Stopwatch:
    """Context manager recording the wall time of a block"""

    def __init__(self):
        self.start: Optional[datetime.datetime] = None
        self.elapsed = datetime.timedelta()

    def __enter__(self):
        self.start = datetime.datetime.now()
        return self

    def __exit__(self, *exc_info):
        self.elapsed = datetime.datetime.now() - self.start
        return False

    def __str__(self):
        return format_elapsed(self.elapsed)
