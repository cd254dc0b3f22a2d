import pytest
from pydantic import ValidationError

from src.core.config import Settings, load_run_config
from src.models.generator import JodreyTory
from src.models.network import GaussianRule, HardTolerance

RUN = """
ensemble_size = 8
seed = 12
descriptors = ["m1", "q6"]

[generator]
algorithm = "jodrey_tory"
n = 200
cycles = 500

[contact_rule]
kind = "hard_tolerance"
epsilon = 1e-4
"""


def test_run_config_from_toml(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(RUN)
    run = load_run_config(path)
    assert isinstance(run.generator, JodreyTory)
    assert run.generator.cycles == 500
    assert run.ensemble_size == 8 and run.seed == 12
    assert run.contact_rule == HardTolerance(epsilon=1e-4)
    assert run.fit is None


def test_overrides_win_unless_unset(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(RUN)
    run = load_run_config(path, {"seed": 99, "workers": None})
    assert run.seed == 99
    assert run.workers >= 1


def test_gaussian_contact_rule_and_fit_block(tmp_path):
    path = tmp_path / "fit.toml"
    gaussian = RUN.replace(
        'kind = "hard_tolerance"\nepsilon = 1e-4', 'kind = "gaussian"\nsigma = 0.01\ncutoff = 0.02'
    )
    path.write_text(gaussian + '\n[fit]\nparameter = "cycles"\ngrid = [100, 200, 400]\n')
    run = load_run_config(path)
    assert isinstance(run.contact_rule, GaussianRule)
    assert run.fit.grid == [100.0, 200.0, 400.0]
    assert run.fit.replications == 5


@pytest.mark.parametrize(
    "extra",
    ['colour = "red"\n', "ensemble_size = 1\n"],
)
def test_invalid_run_configs_are_rejected(tmp_path, extra):
    path = tmp_path / "bad.toml"
    body = RUN.replace("ensemble_size = 8\n", "") if "ensemble_size" in extra else RUN
    path.write_text(extra + body)
    with pytest.raises(ValidationError):
        load_run_config(path)


def test_settings_read_environment(monkeypatch):
    monkeypatch.setenv("PACKLAB_CONTACT_TOLERANCE", "1e-4")
    monkeypatch.setenv("PACKLAB_LOG_LEVEL", "debug")
    fresh = Settings()
    assert fresh.contact_tolerance == 1e-4
    assert fresh.log_level == "DEBUG"
