import pytest

from ocql.config import ExperimentConfig, load_config, to_yaml
from ocql.errors import ConfigError


def test_packaged_defaults():
    config = load_config()
    assert isinstance(config, ExperimentConfig)
    assert config.env.name == "cs1"
    assert config.env.id == "PhycocyaninFedBatch-v0"
    assert config.agent.initial_backoffs == [-500.0, -0.05]
    assert config.agent.constraint_batch_sizes == [500, 1000]
    assert config.agent.es.population == 40
    assert config.omega == 0.01
    assert config.job_logging["handlers"]["file"]["filename"] == "outputs/ocql.log"


def test_environment_preset_override():
    config = load_config(overrides=["env=synthetic", "agent.iterations=3", "calibrate.omega=0.2"])
    assert config.env.id == "GaussianThreshold-v0"
    assert config.env.params == {"mean": 0.5, "std": 0.25}
    assert config.agent.hidden_sizes == [32, 32]
    assert config.agent.iterations == 3
    assert config.env.omega == 0.1
    assert config.omega == 0.2


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError):
        load_config(overrides=["agent.bogus=1"])
    with pytest.raises(ConfigError):
        load_config(overrides=["+agent.bogus=1"])


def test_type_error_names_the_key():
    with pytest.raises(ConfigError) as info:
        load_config(overrides=["seed=abc"])
    assert "seed" in str(info.value)


def test_range_checks():
    with pytest.raises(ConfigError) as info:
        load_config(overrides=["calibrate.omega=1.5"])
    assert info.value.key == "calibrate.omega"
    with pytest.raises(ConfigError):
        load_config(overrides=["eval.n_eval=0"])
    with pytest.raises(ConfigError):
        load_config(overrides=["eval.percentiles=[50,1]"])
    with pytest.raises(ConfigError):
        load_config(overrides=["agent.epsilon=2.0"])


def test_user_file_includes_presets(tmp_path):
    path = tmp_path / "experiment.yaml"
    path.write_text("defaults:\n"
                    "  - env: cs2\n"
                    "  - _self_\n"
                    "hydra:\n"
                    "  searchpath:\n"
                    "    - pkg://ocql.conf\n"
                    "seed: 7\n"
                    "out_dir: runs/cs2\n")
    config = load_config(str(path), overrides=["eval.n_eval=20"])
    assert config.env.id == "SemiBatchReactor-v0"
    assert config.agent.initial_backoffs == [-42.0, -80.0]
    assert config.seed == 7 and config.eval.n_eval == 20
    assert config.agent.iterations == 2000


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/experiment.yaml")


def test_yaml_dump_contains_sections():
    text = to_yaml(load_config(overrides=["env=cs2"]))
    for section in ("env:", "agent:", "calibrate:", "nmpc:", "eval:", "SemiBatchReactor-v0"):
        assert section in text


def test_missing_environment_is_named(tmp_path):
    path = tmp_path / "bare.yaml"
    path.write_text("seed: 1\n")
    with pytest.raises(ConfigError) as info:
        load_config(str(path))
    assert info.value.key == "env.id, env.name"


def test_workers_and_normalization():
    config = load_config()
    assert config.workers == 0
    assert config.agent.normalization == "running"
    assert config.env.constraint_scales is None
    with pytest.raises(ConfigError) as info:
        load_config(overrides=["workers=-2"])
    assert info.value.key == "workers"
    with pytest.raises(ConfigError):
        load_config(overrides=["agent.normalization=batch"])
