import pytest

from tools.config import get_settings, load_run_config, reset_settings
from tools.errors import ConfigError


def test_defaults():
    cfg = load_run_config()
    assert cfg.eps == 0.1
    assert cfg.box == (1.0, 2.0)
    assert cfg.sites is None


def test_flags_override_file(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text("eps = 0.05\nsteps = 4\nsites = [[1, 0], [0, 1]]\nxi = [1.0, 1.5]\n")
    cfg = load_run_config(str(path), {"steps": 2, "seed": None})
    assert cfg.eps == 0.05
    assert cfg.steps == 2
    assert cfg.seed == 0
    assert cfg.sites == [(1, 0), (0, 1)]


@pytest.mark.parametrize("body", [
    "eps = -1.0",
    "sites = [[1, 0], [1, 0]]",
    "sites = [[1, 0]]",
    "sites = [[1, 0], [0, 1]]\nxi = [1.0]",
    "xi = [1.0, 3.0]",
    "box = [2.0, 1.0]",
    "samples = 0",
])
def test_invalid_values(tmp_path, body):
    path = tmp_path / "run.toml"
    path.write_text(body + "\n")
    with pytest.raises(ConfigError) as exc:
        load_run_config(str(path))
    assert exc.value.condition == "malformed_config"
    assert exc.value.details["errors"]


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(str(tmp_path / "absent.toml"))
    bad = tmp_path / "bad.toml"
    bad.write_text("eps = = 1\n")
    with pytest.raises(ConfigError):
        load_run_config(str(bad))


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("WORKBENCH_LIE_ORDER", "6")
    monkeypatch.setenv("WORKBENCH_DROP_TOLERANCE", "1e-12")
    reset_settings()
    settings = get_settings()
    assert settings.lie_order == 6
    assert settings.drop_tolerance == 1e-12
    assert get_settings() is settings
