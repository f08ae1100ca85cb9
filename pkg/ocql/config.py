"""
Experiment configuration: structured schema plus hydra composition of the packaged
config tree (``ocql.conf``) or of a user file that may include its environment presets.
"""
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

from hydra import compose, initialize_config_dir, initialize_config_module
from hydra.errors import HydraException
from omegaconf import MISSING, DictConfig, OmegaConf
from omegaconf.errors import OmegaConfBaseException

from ocql.agent import AgentConfig
from ocql.errors import ConfigError
from ocql.nmpc import NmpcConfig

log = logging.getLogger(__name__)

CONFIG_MODULE = "ocql.conf"


@dataclass
class EnvConfig:
    name: str = MISSING
    id: str = MISSING
    # constructor keyword arguments of the environment
    params: Dict[str, Any] = field(default_factory=dict)
    constraint_scales: Optional[List[float]] = None
    omega: float = 0.01


@dataclass
class CalibrateConfig:
    # falls back to env.omega
    omega: Optional[float] = None
    n_samples: int = 1000
    tol: float = 1e-3
    max_iter: int = 20
    allocation: str = "bonferroni"
    smoothing: bool = False
    fd_fraction: float = 0.02
    damping_fraction: float = 0.2


@dataclass
class EvalConfig:
    n_eval: int = 400
    percentiles: List[float] = field(default_factory=lambda: [1.0, 50.0, 99.0])


def default_job_logging() -> Dict[str, Any]:
    return {
        "version": 1,
        "formatters": {"simple": {"format": "[%(asctime)s][%(name)s][%(levelname)s] - %(message)s"}},
        "handlers": {"console": {"class": "logging.StreamHandler",
                                 "formatter": "simple",
                                 "stream": "ext://sys.stdout"}},
        "root": {"level": "INFO", "handlers": ["console"]},
        "disable_existing_loggers": False,
    }


@dataclass
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    calibrate: CalibrateConfig = field(default_factory=CalibrateConfig)
    nmpc: NmpcConfig = field(default_factory=NmpcConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    out_dir: str = "outputs"
    progress: bool = True
    # rollout processes, 0 for one per core
    workers: int = 0
    job_logging: Dict[str, Any] = field(default_factory=default_job_logging)

    @property
    def omega(self) -> float:
        return self.env.omega if self.calibrate.omega is None else self.calibrate.omega


def compose_config(config_path: Optional[str] = None, overrides: Sequence[str] = ()) -> DictConfig:
    """
    Compose the raw config with hydra. Without ``config_path`` the packaged ``config.yaml`` is
    used; otherwise the file's directory becomes the primary config source.
    """
    overrides = list(overrides)
    try:
        if config_path is None:
            with initialize_config_module(config_module=CONFIG_MODULE, version_base=None):
                return compose(config_name="config", overrides=overrides)
        config_path = os.path.abspath(config_path)
        if not os.path.isfile(config_path):
            raise ConfigError("config file not found: {}".format(config_path))
        config_dir, config_file = os.path.split(config_path)
        with initialize_config_dir(config_dir=config_dir, version_base=None):
            return compose(config_name=os.path.splitext(config_file)[0], overrides=overrides)
    except HydraException as err:
        raise ConfigError(str(err)) from err
    except OmegaConfBaseException as err:
        raise ConfigError(str(err), key=getattr(err, "full_key", None)) from err


def load_config(config_path: Optional[str] = None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """
    Compose, validate against the schema and instantiate the experiment config.
    Missing mandatory keys, unknown keys and type errors become ``ConfigError`` naming the key.
    """
    raw = compose_config(config_path, overrides)
    try:
        merged = OmegaConf.merge(OmegaConf.structured(ExperimentConfig), raw)
        missing = sorted(OmegaConf.missing_keys(merged))
        if missing:
            raise ConfigError("missing mandatory value", key=", ".join(missing))
        config = OmegaConf.to_object(merged)
    except OmegaConfBaseException as err:
        key = getattr(err, "full_key", None) or None
        raise ConfigError(_first_line(err), key=key) from err
    except ValueError as err:
        # raised by the dataclass validators
        raise ConfigError(str(err)) from err
    validate(config)
    log.debug("loaded config for %s from %s", config.env.id, config_path or "ocql.conf")
    return config


def validate(config: ExperimentConfig) -> None:
    if config.workers < 0:
        raise ConfigError("must be >= 0 (0 uses every core), got {}".format(config.workers), key="workers")
    if config.eval.n_eval < 1:
        raise ConfigError("must be >= 1, got {}".format(config.eval.n_eval), key="eval.n_eval")
    percentiles = list(config.eval.percentiles)
    if any(not 0.0 < p < 100.0 for p in percentiles) or percentiles != sorted(percentiles):
        raise ConfigError("must be sorted and inside (0, 100), got {}".format(percentiles), key="eval.percentiles")
    if not 0.0 < config.omega < 1.0:
        raise ConfigError("must lie in (0, 1), got {}".format(config.omega), key="calibrate.omega")
    if config.calibrate.n_samples < 1:
        raise ConfigError("must be >= 1", key="calibrate.n_samples")
    if config.calibrate.allocation not in ("bonferroni", "marginal"):
        raise ConfigError("must be 'bonferroni' or 'marginal'", key="calibrate.allocation")


def to_yaml(config: ExperimentConfig) -> str:
    return OmegaConf.to_yaml(OmegaConf.structured(config))


def _first_line(err: Exception) -> str:
    return str(err).strip().splitlines()[0] if str(err).strip() else type(err).__name__
