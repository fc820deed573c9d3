"""
Configuration Module

One settings table drives the command-line flags, the `SVRBENCH_*`
environment variables and the `key=value` config files.

Resolution order, later wins:
1. built-in defaults
2. environment variables `SVRBENCH_<KEY>` (a `.env` file in the working
   directory is loaded first)
3. the `--config` file
4. explicit command-line flags

`--seed` is a master seed. The world, channel, split and training seeds
are derived from it unless set individually.
"""

from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, Iterable, Mapping, NamedTuple, Optional, Sequence, Tuple
import argparse
import logging
import os

import numpy as np
from dotenv import dotenv_values, find_dotenv, load_dotenv

from .errors import ConfigError
from .simulate import DegradationChannel, SCENARIOS, SplitConfig, WorldConfig, scenario_channel
from .training import TrainConfig

_logger = logging.getLogger(__name__)

ENV_PREFIX = "SVRBENCH_"
METHODS = ("baseline", "sn", "pa", "svr", "svr_sn")
MODES = ("original", "degraded")
BACKENDS = ("cosine", "plda")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got '{text}'")


def parse_int_tuple(text: str) -> Tuple[int, ...]:
    return tuple(int(part) for part in text.replace(" ", "").split(",") if part)


def parse_name_list(text: str) -> Tuple[str, ...]:
    return tuple(part.strip() for part in text.split(",") if part.strip())


def _choice(options: Sequence[str]) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got '{text}'")
        return text
    return parse


def _log_level(text: str) -> str:
    return _choice(LOG_LEVELS)(text.upper())


class Setting(NamedTuple):
    parse: Callable[[str], Any]
    default: Any
    help: str
    group: str


SETTINGS: Dict[str, Setting] = {
    # common
    "seed": Setting(int, 0, "master seed for every derived seed", "common"),
    "log_level": Setting(_log_level, "WARNING", "logging level", "common"),
    # synthetic world
    "dim": Setting(int, 32, "embedding dimension", "world"),
    "n_speakers": Setting(int, 400, "number of synthetic speakers", "world"),
    "utts_per_speaker": Setting(int, 10, "utterances per speaker", "world"),
    "sigma_between": Setting(float, 1.0, "std of speaker means", "world"),
    "sigma_within": Setting(float, 0.3, "std of utterances around their speaker mean", "world"),
    "world_seed": Setting(int, None, "world seed (derived from --seed when unset)", "world"),
    # degradation channel
    "scenario": Setting(_choice(SCENARIOS), "telephone", "mismatch scenario preset", "channel"),
    "channel": Setting(_choice(("additive_noise", "rank_projection", "affine_channel")), None,
                       "channel kind, overriding the scenario preset", "channel"),
    "noise_sigma": Setting(float, None, "per-utterance isotropic channel noise std", "channel"),
    "rank": Setting(int, None, "rank of the rank_projection channel", "channel"),
    "scale_spread": Setting(float, None, "affine channel per-axis scale spread", "channel"),
    "bias_spread": Setting(float, None, "affine channel bias std", "channel"),
    "rotation": Setting(float, None, "affine channel rotation strength", "channel"),
    "nuisance_rank": Setting(int, None, "affine channel session-nuisance rank (0 = plain A x + b + n)", "channel"),
    "nuisance_sigma": Setting(float, None, "affine channel session-nuisance std", "channel"),
    "channel_seed": Setting(int, None, "channel seed (derived from --seed when unset)", "channel"),
    # protocol
    "train_speaker_fraction": Setting(float, 0.75, "share of speakers used for training", "split"),
    "n_enroll_utts": Setting(int, 3, "enrollment utterances per eval speaker", "split"),
    "n_target": Setting(int, 1000, "target trials", "split"),
    "n_nontarget": Setting(int, 5000, "nontarget trials", "split"),
    "split_seed": Setting(int, None, "split seed (derived from --seed when unset)", "split"),
    # SVR training
    "hidden_dims": Setting(parse_int_tuple, (512, 512), "comma-separated hidden layer widths", "train"),
    "activation": Setting(_choice(("relu", "tanh")), "relu", "hidden activation", "train"),
    "steps": Setting(int, 2000, "optimizer steps", "train"),
    "batch_size": Setting(int, 64, "pairs per step", "train"),
    "learning_rate": Setting(float, 1e-3, "optimizer step size", "train"),
    "optimizer": Setting(_choice(("adam", "sgd")), "adam", "optimizer", "train"),
    "same_speaker_fraction": Setting(float, 0.5, "share of same-speaker pairs per batch", "train"),
    "w_recon": Setting(float, 1.0, "weight of the reconstruction terms", "train"),
    "w_cos": Setting(float, 1.0, "weight of the cosine term", "train"),
    "log_every": Setting(int, 100, "log the batch loss every N steps (0 disables)", "train"),
    "train_seed": Setting(int, None, "training seed (derived from --seed when unset)", "train"),
    # PLDA
    "plda_iters": Setting(int, 10, "PLDA EM iterations", "plda"),
    "length_norm": Setting(parse_bool, False, "length-normalize embeddings for PLDA", "plda"),
    # experiment
    "backend": Setting(_choice(BACKENDS), "cosine", "scoring backend for baseline, SN and SVR methods", "experiment"),
    "methods": Setting(parse_name_list, METHODS, "comma-separated methods", "experiment"),
    "modes": Setting(parse_name_list, MODES, "comma-separated enrollment modes", "experiment"),
    "cohort_size": Setting(int, 200, "cohort utterances drawn from the training split", "experiment"),
    "top_k": Setting(int, 200, "adaptive s-norm top-k (0 = whole cohort)", "experiment"),
    "alpha_steps": Setting(int, 10, "PLDA adaptation grid steps over [0, 1]", "experiment"),
}

SEED_KEYS = ("world_seed", "channel_seed", "split_seed", "train_seed")


def flag_name(key: str) -> str:
    return "--" + key.replace("_", "-")


def add_setting_arguments(
    parser: argparse.ArgumentParser,
    groups: Iterable[str] = (),
    keys: Iterable[str] = (),
) -> None:
    """Add one flag per setting of the given groups and keys; unset flags stay None."""
    groups = set(groups)
    keys = set(keys)
    for key, setting in SETTINGS.items():
        if setting.group not in groups and key not in keys:
            continue
        if setting.parse is parse_bool:
            parser.add_argument(flag_name(key), dest=key, action="store_const", const="true", default=None,
                                help=setting.help)
        else:
            parser.add_argument(flag_name(key), dest=key, default=None, metavar="VALUE",
                                help=f"{setting.help} (default: {_show(setting.default)})")


def _show(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return "derived" if value is None else str(value)


def _parse(key: str, raw: str, source: str):
    try:
        return SETTINGS[key].parse(raw)
    except ValueError as e:
        raise ConfigError(f"{source}: invalid value for '{key}': {e}") from None


def normalize_key(key: str) -> str:
    return key.strip().lower().replace("-", "_")


def read_config_file(path: str) -> Dict[str, str]:
    """
    Read a `key=value` config file.

    Raises:
        FileNotFoundError: If the file does not exist
        ConfigError: On unknown keys or keys without a value
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Config file not found at '{path}'.")
    raw = dotenv_values(path)
    values: Dict[str, str] = {}
    for key, value in raw.items():
        name = normalize_key(key)
        if name.startswith(ENV_PREFIX.lower()):
            name = name[len(ENV_PREFIX):]
        if name not in SETTINGS:
            raise ConfigError(f"{path}: unknown configuration key '{key}'.")
        if value is None:
            raise ConfigError(f"{path}: key '{key}' has no value.")
        values[name] = value
    return values


@dataclass(frozen=True)
class Settings:
    """Resolved settings plus the keys that were set explicitly."""
    values: Mapping[str, Any]
    explicit: frozenset

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)


def resolve_settings(
    flags: Optional[Mapping[str, Optional[str]]] = None,
    config_path: Optional[str] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> Settings:
    """
    Merge defaults, environment, config file and flags.

    Args:
        flags: Raw flag strings by key, None for flags not given
        config_path: Optional `key=value` config file
        environ: Environment to read; defaults to os.environ after loading
            a `.env` file from the working directory

    Returns:
        Settings with parsed values and derived seeds
    """
    if environ is None:
        dotenv_path = find_dotenv(usecwd=True)
        if dotenv_path:
            load_dotenv(dotenv_path)
        environ = os.environ

    values = {key: setting.default for key, setting in SETTINGS.items()}
    explicit = set()
    for key in SETTINGS:
        name = ENV_PREFIX + key.upper()
        if name in environ:
            values[key] = _parse(key, environ[name], f"environment variable {name}")
            explicit.add(key)
    if config_path:
        for key, raw in read_config_file(config_path).items():
            values[key] = _parse(key, raw, config_path)
            explicit.add(key)
    for key, raw in (flags or {}).items():
        if raw is None or key not in SETTINGS:
            continue
        values[key] = _parse(key, raw, f"flag {flag_name(key)}")
        explicit.add(key)

    for key, derived in zip(SEED_KEYS, derive_seeds(values["seed"], len(SEED_KEYS))):
        if values[key] is None:
            values[key] = derived
    _logger.debug("Resolved settings: %s", values)
    return Settings(values, frozenset(explicit))


def derive_seeds(seed: int, n: int) -> Tuple[int, ...]:
    """n independent 32-bit seeds from one master seed."""
    if seed < 0:
        raise ConfigError(f"seed must be non-negative, got {seed}.")
    return tuple(int(s) for s in np.random.SeedSequence(seed).generate_state(n))


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def _build(factory, **kwargs):
    try:
        return factory(**kwargs)
    except ValueError as e:
        raise ConfigError(f"Invalid {factory.__name__}: {e}") from None


def world_config(settings: Settings) -> WorldConfig:
    return _build(
        WorldConfig,
        dim=settings["dim"],
        n_speakers=settings["n_speakers"],
        utts_per_speaker=settings["utts_per_speaker"],
        sigma_between=settings["sigma_between"],
        sigma_within=settings["sigma_within"],
        seed=settings["world_seed"],
    )


_CHANNEL_FIELDS = {
    "noise_sigma": "sigma",
    "rank": "rank",
    "scale_spread": "scale_spread",
    "bias_spread": "bias_spread",
    "rotation": "rotation",
    "nuisance_rank": "nuisance_rank",
    "nuisance_sigma": "nuisance_sigma",
}


def channel_config(settings: Settings) -> DegradationChannel:
    """
    The scenario preset, or a bare channel of the requested kind, with
    every explicitly given channel parameter applied on top.
    """
    seed = settings["channel_seed"]
    overrides = {field: settings[key] for key, field in _CHANNEL_FIELDS.items() if settings[key] is not None}
    kind = settings["channel"]
    if kind is None:
        base = scenario_channel(settings["scenario"], settings["dim"], seed)
    elif kind == "affine_channel":
        base = DegradationChannel.affine_channel(seed=seed)
    elif kind == "rank_projection":
        base = DegradationChannel.rank_projection(max(1, settings["dim"] // 2), seed=seed)
    else:
        base = DegradationChannel.additive_noise(0.0, seed=seed)
    return replace(base, **overrides)


def split_config(settings: Settings) -> SplitConfig:
    return _build(
        SplitConfig,
        train_speaker_fraction=settings["train_speaker_fraction"],
        n_enroll_utts=settings["n_enroll_utts"],
        n_target=settings["n_target"],
        n_nontarget=settings["n_nontarget"],
        seed=settings["split_seed"],
    )


def train_config(settings: Settings) -> TrainConfig:
    return _build(
        TrainConfig,
        hidden_dims=settings["hidden_dims"],
        activation=settings["activation"],
        steps=settings["steps"],
        batch_size=settings["batch_size"],
        learning_rate=settings["learning_rate"],
        optimizer=settings["optimizer"],
        same_speaker_fraction=settings["same_speaker_fraction"],
        seed=settings["train_seed"],
        loss_weights=(settings["w_recon"], settings["w_cos"]),
        log_every=settings["log_every"],
    )


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Everything a full experiment run needs.

    Attributes:
        methods: Subset of baseline, sn, pa, svr, svr_sn
        modes: Subset of original (clean enrollment) and degraded
        backend: Backend of the baseline, SN and SVR methods; PA always
            scores with PLDA
    """
    world: WorldConfig
    channel: DegradationChannel
    split: SplitConfig
    train: TrainConfig
    backend: str = "cosine"
    methods: Tuple[str, ...] = METHODS
    modes: Tuple[str, ...] = MODES
    plda_iters: int = 10
    length_norm: bool = False
    cohort_size: int = 200
    top_k: int = 200
    alpha_steps: int = 10
    out_dir: str = "results"
    seed: int = 0

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("At least one method is required.")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"Unknown methods {unknown}; expected a subset of {METHODS}.")
        bad_modes = [m for m in self.modes if m not in MODES]
        if not self.modes or bad_modes:
            raise ConfigError(f"Modes must be a non-empty subset of {MODES}, got {self.modes}.")
        if len(set(self.methods)) != len(self.methods) or len(set(self.modes)) != len(self.modes):
            raise ConfigError("Methods and modes must not repeat.")
        if self.backend not in BACKENDS:
            raise ConfigError(f"Unknown backend '{self.backend}'; expected one of {BACKENDS}.")
        if self.plda_iters < 1 or self.cohort_size < 1 or self.top_k < 0 or self.alpha_steps < 1:
            raise ConfigError("plda_iters, cohort_size and alpha_steps must be positive and top_k non-negative.")


def experiment_config(settings: Settings, out_dir: str) -> ExperimentConfig:
    return ExperimentConfig(
        world=world_config(settings),
        channel=channel_config(settings),
        split=split_config(settings),
        train=train_config(settings),
        backend=settings["backend"],
        methods=settings["methods"],
        modes=settings["modes"],
        plda_iters=settings["plda_iters"],
        length_norm=settings["length_norm"],
        cohort_size=settings["cohort_size"],
        top_k=settings["top_k"],
        alpha_steps=settings["alpha_steps"],
        out_dir=out_dir,
        seed=settings["seed"],
    )
