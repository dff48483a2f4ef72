# tests/test_config.py
import pytest
from pydantic import ValidationError

from core.config import Settings


def test_default_schedule():
    s = Settings()
    assert (s.control_substeps, s.perception_substeps) == (4, 8)
    assert s.float_format == "%.9g"
    assert s.float_format % (1.0 / 3.0) == "0.333333333"


@pytest.mark.parametrize("overrides", [
    {"CONTROL_DT": 0.003},
    {"PERCEPTION_DT": 0.085},
    {"CONTROL_DT": 0.001},
])
def test_rates_must_nest(overrides):
    with pytest.raises(ValidationError):
        Settings(**overrides)


def test_env_override(monkeypatch):
    monkeypatch.setenv("FLOAT_SIG_DIGITS", "12")
    monkeypatch.setenv("BATCH_WORKERS", "4")
    s = Settings()
    assert s.float_format == "%.12g"
    assert s.BATCH_WORKERS == 4
