"""Import optional tooling, installing it into a private directory if missing"""

import importlib
import inspect
import logging
import os
import subprocess
import sys

from types import ModuleType
from typing import Optional

###############################################################################
# Constants
###############################################################################

THIS_FILE = os.path.abspath(inspect.getsourcefile(lambda: None) or __file__)
THIS_DIR = os.path.dirname(THIS_FILE)

DEPS_DIR = os.path.join(THIS_DIR, ".deps")
PY_DEPS_DIR = os.path.join(DEPS_DIR, f"python{sys.version_info[0]}.{sys.version_info[1]}")

# set MVNTEST_NO_PIP=1 to forbid network installs (ie, on CI)
NO_PIP_ENV_VAR = "MVNTEST_NO_PIP"

# module name -> pip requirement, for modules whose distribution name differs
PIP_PACKAGES = {
    "tqdm": "tqdm",
}

logger = logging.getLogger(__name__)

###############################################################################
# Functions
###############################################################################


def _try_import(module_name: str) -> Optional[ModuleType]:
    try:
        return importlib.import_module(module_name)
    except ImportError:
        return None


def pip_import(module_name: str, pip_package_name: Optional[str] = None) -> ModuleType:
    module = _try_import(module_name)
    if module is not None:
        return module

    # an earlier run may already have installed it privately
    if PY_DEPS_DIR not in sys.path and os.path.isdir(PY_DEPS_DIR):
        sys.path.insert(0, PY_DEPS_DIR)
        module = _try_import(module_name)
        if module is not None:
            return module

    if os.environ.get(NO_PIP_ENV_VAR):
        raise ImportError(f"{module_name} is not installed and {NO_PIP_ENV_VAR} forbids installing it")

    requirement = pip_package_name or PIP_PACKAGES.get(module_name, module_name)
    os.makedirs(PY_DEPS_DIR, exist_ok=True)
    if PY_DEPS_DIR not in sys.path:
        sys.path.insert(0, PY_DEPS_DIR)

    logger.warning("installing %s into %s", requirement, PY_DEPS_DIR)
    pip_install(requirement)
    importlib.invalidate_caches()
    return importlib.import_module(module_name)


def pip_install(requirement: str):
    subprocess.check_call([sys.executable, "-m", "pip", "install", "--target", PY_DEPS_DIR, requirement])
