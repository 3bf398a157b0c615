from __future__ import annotations

from dataclasses import replace

import pytest
from dotenv import load_dotenv

from multiseq.config import DEFAULT_RUN_CONFIG, validate_run_config
from multiseq.env_override import apply_env_overrides
from multiseq.errors import SpecError

pytestmark = pytest.mark.usefixtures("clean_env")


def test_defaults_are_valid():
    validate_run_config(DEFAULT_RUN_CONFIG)


def test_without_env_nothing_changes():
    assert apply_env_overrides(DEFAULT_RUN_CONFIG) == DEFAULT_RUN_CONFIG


def test_env_overrides_fields(monkeypatch: pytest.MonkeyPatch):
    monkeypatch.setenv("MULTISEQ_THREADS", "8")
    monkeypatch.setenv("MULTISEQ_TOLERANCE", "0.01")
    monkeypatch.setenv("MULTISEQ_LOG_LEVEL", "debug")
    config = apply_env_overrides(DEFAULT_RUN_CONFIG)
    assert config.threads == 8
    assert config.tolerance == 0.01
    assert config.log_level == "DEBUG"
    assert config.reps == DEFAULT_RUN_CONFIG.reps


def test_blank_log_level_is_ignored(monkeypatch: pytest.MonkeyPatch):
    monkeypatch.setenv("MULTISEQ_LOG_LEVEL", "  ")
    assert apply_env_overrides(DEFAULT_RUN_CONFIG).log_level == DEFAULT_RUN_CONFIG.log_level


@pytest.mark.parametrize("name,value", [("SEED", "abc"), ("REPS", "1e5"), ("TOLERANCE", "tight")])
def test_unparsable_values(monkeypatch: pytest.MonkeyPatch, name: str, value: str):
    monkeypatch.setenv("MULTISEQ_" + name, value)
    with pytest.raises(SpecError, match="MULTISEQ_" + name):
        apply_env_overrides(DEFAULT_RUN_CONFIG)


def test_dotenv_file_is_read(monkeypatch: pytest.MonkeyPatch, tmp_path):
    path = tmp_path / ".env"
    path.write_text("MULTISEQ_MAX_ROUNDS=4\n", encoding="utf-8")
    monkeypatch.setenv("MULTISEQ_MAX_ROUNDS", "9")
    monkeypatch.setattr("multiseq.env_override.load_dotenv", lambda: load_dotenv(path, override=True))
    assert apply_env_overrides(DEFAULT_RUN_CONFIG).max_rounds == 4


@pytest.mark.parametrize(
    "changes",
    [{"threads": 0}, {"seed": -1}, {"xtol": 0.0}, {"grid_step": -0.1}, {"log_level": "TRACE"}],
)
def test_validation_rejects(changes):
    with pytest.raises(SpecError):
        validate_run_config(replace(DEFAULT_RUN_CONFIG, **changes))
