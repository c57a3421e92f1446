import pytest

from gapflow import config


def test_defaults_round_trip(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('[experiment]\nn = 7\n[temperature]\nkind = "fixed"\ntau_star = 0.1\n')
    cfg = config.load(str(path))
    assert cfg["experiment"]["n"] == 7
    assert cfg["temperature"]["tau_star"] == 0.1
    assert cfg["init"] == config.DEFAULTS["init"]


@pytest.mark.parametrize(
    "text",
    [
        "[bogus]\nx = 1\n",
        "[experiment]\nwidth = 3\n",
        '[experiment]\nn = "five"\n',
        "[temperature]\ncap = 1\n",
        "[integrator]\nschedule = [[1.0]]\n",
        "[experiment\n",
    ],
)
def test_bad_files_rejected(tmp_path, text):
    path = tmp_path / "bad.toml"
    path.write_text(text)
    with pytest.raises(config.ConfigError):
        config.load(str(path))


def test_missing_file():
    with pytest.raises(config.ConfigError):
        config.load("/nonexistent/x.toml")


def test_overrides_parse_toml_literals():
    cfg = config.apply_overrides(
        config.load(), ["experiment.n=12", "temperature.cap=false", "init.kind=etf", "integrator.dt=1e-3"]
    )
    assert cfg["experiment"]["n"] == 12
    assert cfg["temperature"]["cap"] is False
    assert cfg["init"]["kind"] == "etf"
    assert cfg["integrator"]["dt"] == 1e-3
    assert config.override(cfg, "init.beta0", 3)["init"]["beta0"] == 3
    with pytest.raises(config.ConfigError):
        config.apply_overrides(cfg, ["experiment.n"])
    with pytest.raises(config.ConfigError):
        config.override(cfg, "n", 3)


def test_integer_float_coercion():
    cfg = config.override(config.load(), "experiment.n", 8.0)
    assert cfg["experiment"]["n"] == 8 and isinstance(cfg["experiment"]["n"], int)
    assert config.override(cfg, "integrator.dt", 1)["integrator"]["dt"] == 1.0
    with pytest.raises(config.ConfigError):
        config.override(cfg, "experiment.n", 8.5)


def test_hash_is_stable_and_sensitive():
    a = config.load()
    b = config.load()
    assert config.config_hash(a) == config.config_hash(b)
    assert config.config_hash(config.override(a, "experiment.seed", 1)) != config.config_hash(a)
    assert len(config.config_hash(a)) == 64
    assert config.config_hash(config.override(a, "output.dir", "elsewhere")) == config.config_hash(a)
