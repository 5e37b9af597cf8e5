# cvae_beam/config.py
"""
config.py
---------
Experiment configuration: nested dataclasses loaded from YAML.

`configs/settings.yaml` (shipped inside the package) is the desk-scale setup
and `configs/full.yaml` the full-scale one. CVAE_BEAM_CONFIG overrides the
default file and CVAE_BEAM_OUTPUT the output root.
"""
import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import yaml

from cvae_beam.beamforming import SolverOptions
from cvae_beam.channel import ChannelConfig
from cvae_beam.cvae import CvaeConfig, TrainHyper, Variant
from cvae_beam.errors import ConfigError
from cvae_beam.feedback import FeedbackConfig

logger = logging.getLogger(__name__)

# ---- Paths & defaults -------------------------------------------------------
CONFIG_DIR = Path(__file__).resolve().parent / "configs"
DEFAULT_CONFIG = Path(os.environ.get("CVAE_BEAM_CONFIG", CONFIG_DIR / "settings.yaml"))
FULL_CONFIG = CONFIG_DIR / "full.yaml"
OUTPUT_ENV = "CVAE_BEAM_OUTPUT"


@dataclass(frozen=True)
class EvaluationConfig:
    test_fraction: float = 0.1
    power_budget: float = 10.0
    rate_unit: str = "nats"
    n_workers: int = 1
    # motivation study
    n_trials: int = 100
    motivation_ues: int = 4
    motivation_antennas: int = 8
    motivation_sigma: float = 0.1
    motivation_power: float = 100.0
    motivation_eval_draws: int = 200
    # sample-driven schemes
    n_samples: int = 100
    n_rate_trials: int = 20
    max_test_inputs: int = 2000
    training_noise_variance: float = 0.0
    compare_noise_variances: Tuple[float, ...] = (0.0, 0.2, 0.4)
    table_sizes: Tuple[int, ...] = (100, 500, 1000)
    table_seeds: int = 3

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("evaluation.test_fraction must lie in (0, 1)")
        if self.rate_unit not in ("nats", "bits"):
            raise ConfigError(f"evaluation.rate_unit must be 'nats' or 'bits', got {self.rate_unit!r}")
        positive = ("power_budget", "motivation_power", "n_trials", "motivation_ues", "motivation_antennas",
                    "motivation_eval_draws", "n_samples", "n_rate_trials", "max_test_inputs",
                    "table_seeds", "n_workers")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"evaluation.{name} must be > 0")
        if self.motivation_sigma < 0 or self.training_noise_variance < 0:
            raise ConfigError("noise levels must be >= 0")
        if any(v < 0 for v in self.compare_noise_variances):
            raise ConfigError("evaluation.compare_noise_variances must be >= 0")
        if not self.table_sizes or any(n < 1 for n in self.table_sizes):
            raise ConfigError("evaluation.table_sizes must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    feedback: FeedbackConfig = field(default_factory=FeedbackConfig)
    solver: SolverOptions = field(default_factory=SolverOptions)
    cvae: CvaeConfig = field(default_factory=CvaeConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    output_dir: str = "outputs"
    master_seed: int = 2024

    def __post_init__(self):
        if self.master_seed < 0:
            raise ConfigError("master_seed must be unsigned")
        if self.feedback.n_ports > self.channel.n_antennas:
            raise ConfigError("feedback.n_ports cannot exceed channel.n_antennas")

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "ExperimentConfig":
        data = dict(data or {})
        _reject_unknown("", data, {f.name for f in dataclasses.fields(cls)})
        cvae = dict(data.get("cvae") or {})
        train = _build(TrainHyper, "cvae.train", cvae.pop("train", None))
        return cls(
            channel=_build(ChannelConfig, "channel", data.get("channel")),
            feedback=_build(FeedbackConfig, "feedback", data.get("feedback")),
            solver=_build(SolverOptions, "solver", data.get("solver")),
            cvae=_build(CvaeConfig, "cvae", cvae, train=train),
            evaluation=_build(EvaluationConfig, "evaluation", data.get("evaluation")),
            output_dir=str(data.get("output_dir", "outputs")),
            master_seed=int(data.get("master_seed", 2024)),
        )

    def to_dict(self) -> Dict[str, Any]:
        return _plain(dataclasses.asdict(self))

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _reject_unknown(section: str, data: Dict[str, Any], known) -> None:
    unknown = sorted(set(data) - set(known))
    if unknown:
        where = f" in section '{section}'" if section else ""
        raise ConfigError(f"unknown config keys{where}: {', '.join(unknown)}")


def _build(kind, section: str, data: Optional[Dict[str, Any]], **extra):
    data = dict(data or {})
    fields = {f.name: f for f in dataclasses.fields(kind)}
    _reject_unknown(section, data, fields)
    for name, value in list(data.items()):
        if isinstance(value, list):
            data[name] = tuple(value)
    try:
        return kind(**data, **extra)
    except TypeError as e:
        raise ConfigError(f"bad values in section '{section}': {e}") from e


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, Variant):
        return obj.value
    return obj


def load_config(path=None, full_scale: bool = False) -> ExperimentConfig:
    path = Path(path) if path else (FULL_CONFIG if full_scale else DEFAULT_CONFIG)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from e
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    cfg = ExperimentConfig.from_dict(data)
    logger.debug("loaded config %s (hash %s)", path, config_hash(cfg))
    return cfg


def dump_config(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False), encoding="utf-8")
    return path


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def derive_seed(master: int, label: str, index: int = 0) -> int:
    """Child seed: first 8 bytes of sha256("{master}:{label}:{index}"), 63 bits."""
    digest = hashlib.sha256(f"{master}:{label}:{index}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)


def output_root(cfg: ExperimentConfig) -> Path:
    return Path(os.environ.get(OUTPUT_ENV, cfg.output_dir))
