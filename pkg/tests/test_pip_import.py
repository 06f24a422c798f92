import json
import sys

import pytest

import pip_import


def test_installed_module_is_returned():
    assert pip_import.pip_import("json") is json


def test_no_pip_refuses_install(monkeypatch):
    calls = []
    monkeypatch.setenv(pip_import.NO_PIP_ENV_VAR, "1")
    monkeypatch.setattr(pip_import, "pip_install", calls.append)
    with pytest.raises(ImportError, match=pip_import.NO_PIP_ENV_VAR):
        pip_import.pip_import("mvntest_module_that_does_not_exist")
    assert calls == []


def test_install_uses_package_name(monkeypatch, tmp_path):
    calls = []
    monkeypatch.delenv(pip_import.NO_PIP_ENV_VAR, raising=False)
    monkeypatch.setattr(sys, "path", list(sys.path))
    monkeypatch.setattr(pip_import, "PY_DEPS_DIR", str(tmp_path / "deps"))
    monkeypatch.setattr(pip_import, "pip_install", calls.append)
    with pytest.raises(ImportError):
        pip_import.pip_import("mvntest_module_that_does_not_exist", "some-dist[extra]")
    assert calls == ["some-dist[extra]"]
