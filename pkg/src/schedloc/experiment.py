"""
Experiment configuration: JSON files and built-in presets.

Every time-like key carries its unit in the name (`_ns`, `_ms`), lengths end
in `_m` and skews in `_ppm`. The loader converts everything to SI once and
validates it, so the rest of the package only ever sees seconds, metres and
dimensionless skews.
"""

import copy
import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import numpy as np

from .calibration import CalibrationSettings
from .config import (
    DEFAULT_ANCHOR_PRIOR_STD,
    DEFAULT_BATCHES_PER_FIX,
    DEFAULT_CONFIDENCE,
    DEFAULT_LISTENER_PRIOR_STD,
    DEFAULT_MONTE_CARLO_RUNS,
    DEFAULT_N_BATCHES,
    DEFAULT_OUTPUT_DIRECTORY,
    DEFAULT_RNG_SEED,
    DEFAULT_SCHEDULE,
    FIG6_ANCHORS,
    FIG6_LISTENERS,
    MS,
    NS,
    PPM,
)
from .estimation import Prior, build_prior
from .models import (
    ClockParams,
    ConfigError,
    NetworkClocks,
    NetworkGeometry,
    NoiseParams,
)
from .schedule import Schedule, build_schedule_matrices
from .simkit import SimConfig, draw_clocks


#########################################################################################
# Presets
#########################################################################################

_BASE_PRESET: Dict[str, Any] = {
    "geometry": {
        "anchors_m": [list(anchor) for anchor in FIG6_ANCHORS],
        "listener_m": list(FIG6_LISTENERS[0]),
    },
    "clocks": {
        "anchor_skews_ppm": None,
        "listener_skew_ppm": 0.0,
        "random_skew_span_ppm": 5.0,
        "jitter_ns": 1.5,
        "delay_err_sigma_ns": 3.3,
    },
    "noise": {"channel_noise_ns": 1.5},
    "schedule": {"order": list(DEFAULT_SCHEDULE), "nominal_delay_ms": 3.0},
    "n_batches": DEFAULT_N_BATCHES,
    "rng_seed": DEFAULT_RNG_SEED,
    "calibration": {
        "retrieval": True,
        "rls": True,
        "outlier_threshold_ns": 100.0,
        "apply_final_estimate": True,
    },
    "estimation": {
        "sigma_ns": 3.0,
        "anchor_prior_std_m": DEFAULT_ANCHOR_PRIOR_STD,
        "listener_prior_std_m": DEFAULT_LISTENER_PRIOR_STD,
        "listener_prior_mean_m": None,
        "batches_per_fix": DEFAULT_BATCHES_PER_FIX,
        "monte_carlo_runs": DEFAULT_MONTE_CARLO_RUNS,
        "confidence": DEFAULT_CONFIDENCE,
    },
    "outputs": {"directory": DEFAULT_OUTPUT_DIRECTORY},
}


def _preset(**sections: Dict[str, Any]) -> Dict[str, Any]:
    data = copy.deepcopy(_BASE_PRESET)
    for key, value in sections.items():
        if isinstance(value, dict):
            data[key].update(value)
        else:
            data[key] = value
    return data


PRESETS: Dict[str, Dict[str, Any]] = {
    "default": _preset(),
    # Three nodes doing two-way ranging; node 3 listens. Noise off, skews fixed
    "fig2": _preset(
        clocks={
            "anchor_skews_ppm": [10.0, -5.0, 3.0],
            "jitter_ns": 0.0,
            "delay_err_sigma_ns": 0.0,
        },
        noise={"channel_noise_ns": 0.0},
        n_batches=1,
    ),
    # Delay-resolution error dominates; residual timing noise of 0.3 ns
    "fig3": _preset(
        clocks={
            "anchor_skews_ppm": [0.0, 0.0, 0.0],
            "jitter_ns": 0.15,
            "delay_err_sigma_ns": 3.3,
        },
        noise={"channel_noise_ns": 0.15},
        estimation={"sigma_ns": 0.3},
        n_batches=10_000,
    ),
    # Relative skews of +-10 ppm, 100 noise seeds for the variance comparison
    "fig4": _preset(
        clocks={"anchor_skews_ppm": [10.0, -10.0, 5.0]},
        estimation={"monte_carlo_runs": 100},
        n_batches=500,
    ),
    # Ideal clocks: estimator scatter against the bound
    "fig6": _preset(
        clocks={"anchor_skews_ppm": [0.0, 0.0, 0.0]},
        calibration={"rls": False},
    ),
}


#########################################################################################
# Settings
#########################################################################################


@dataclass(frozen=True)
class EstimationSettings:
    """
    Attributes:
        sigma: Measurement noise standard deviation in seconds
        anchor_prior_std: Anchor position prior std in metres
        listener_prior_std: Listener position prior std in metres
        listener_prior_mean: Listener prior mean, the anchor centroid when None
        batches_per_fix: Batches pooled into one position fix
        monte_carlo_runs: Runs of the Monte-Carlo harness
        confidence: Probability mass of reported ellipses
    """

    sigma: float
    anchor_prior_std: float = DEFAULT_ANCHOR_PRIOR_STD
    listener_prior_std: float = DEFAULT_LISTENER_PRIOR_STD
    listener_prior_mean: Optional[np.ndarray] = None
    batches_per_fix: int = DEFAULT_BATCHES_PER_FIX
    monte_carlo_runs: int = DEFAULT_MONTE_CARLO_RUNS
    confidence: float = DEFAULT_CONFIDENCE


@dataclass(frozen=True)
class ExperimentConfig:
    geometry: NetworkGeometry
    clocks: NetworkClocks
    noise: NoiseParams
    schedule: Schedule
    n_batches: int
    rng_seed: int
    calibration: CalibrationSettings
    estimation: EstimationSettings
    output_directory: Path
    source: str = "<preset>"

    def to_sim_config(
        self,
        n_batches: Optional[int] = None,
        geometry: Optional[NetworkGeometry] = None,
        clocks: Optional[NetworkClocks] = None,
        rng_seed: Optional[int] = None,
    ) -> SimConfig:
        return SimConfig(
            geometry=geometry or self.geometry,
            clocks=clocks or self.clocks,
            noise=self.noise,
            schedule=self.schedule,
            n_batches=n_batches or self.n_batches,
            rng_seed=self.rng_seed if rng_seed is None else rng_seed,
        )

    def build_prior(self, anchors: Optional[np.ndarray] = None) -> Prior:
        return build_prior(
            self.geometry.anchors if anchors is None else anchors,
            self.estimation.listener_prior_mean,
            self.estimation.anchor_prior_std,
            self.estimation.listener_prior_std,
        )

    def with_listener(self, listener: Sequence[float]) -> "ExperimentConfig":
        return replace(self, geometry=self.geometry.with_listener(listener))


#########################################################################################
# Parsing
#########################################################################################

_TOP_LEVEL_KEYS = set(_BASE_PRESET)


def _section(data: Dict[str, Any], name: str) -> Dict[str, Any]:
    section = data.get(name, {})
    if section is None:
        section = {}
    if not isinstance(section, dict):
        raise ConfigError(f"{name} must be an object")
    unknown = set(section) - set(_BASE_PRESET[name])
    if unknown:
        raise ConfigError(f"unknown keys in {name}: {', '.join(sorted(unknown))}")
    merged = dict(_BASE_PRESET[name])
    merged.update(section)
    return merged


def _number(
    section: Dict[str, Any],
    prefix: str,
    key: str,
    minimum: float = -math.inf,
    strict: bool = False,
) -> float:
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{prefix}.{key} must be a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{prefix}.{key} must be finite")
    if value < minimum or (strict and value == minimum):
        relation = ">" if strict else ">="
        raise ConfigError(f"{prefix}.{key} must be {relation} {minimum:g}, got {value:g}")
    return value


def _integer(value: Any, name: str, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return value


def _flag(section: Dict[str, Any], prefix: str, key: str) -> bool:
    value = section[key]
    if not isinstance(value, bool):
        raise ConfigError(f"{prefix}.{key} must be true or false, got {value!r}")
    return value


def _point(value: Any, name: str) -> np.ndarray:
    try:
        point = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{name} must be an [x, y] pair") from err
    if point.shape != (2,) or not np.all(np.isfinite(point)):
        raise ConfigError(f"{name} must be an [x, y] pair of finite numbers")
    return point


def _parse_geometry(data: Dict[str, Any]) -> NetworkGeometry:
    section = _section(data, "geometry")
    try:
        anchors = np.asarray(section["anchors_m"], dtype=float)
    except (TypeError, ValueError) as err:
        raise ConfigError("geometry.anchors_m must be a list of [x, y] pairs") from err
    listener = section["listener_m"]
    listener = None if listener is None else _point(listener, "geometry.listener_m")
    try:
        return NetworkGeometry(anchors, listener)
    except ValueError as err:
        raise ConfigError(f"geometry: {err}") from err


def _parse_clocks(data: Dict[str, Any], n_anchors: int, rng_seed: int) -> NetworkClocks:
    section = _section(data, "clocks")
    jitter = _number(section, "clocks", "jitter_ns", 0.0) * NS
    delay_err = _number(section, "clocks", "delay_err_sigma_ns", 0.0) * NS
    listener_skew = _number(section, "clocks", "listener_skew_ppm") * PPM

    try:
        if section["anchor_skews_ppm"] is None:
            span = _number(section, "clocks", "random_skew_span_ppm", 0.0) * PPM
            rng = np.random.default_rng(rng_seed)
            return draw_clocks(n_anchors, span, rng, jitter**2, delay_err, listener_skew)

        skews = section["anchor_skews_ppm"]
        if not isinstance(skews, list) or len(skews) != n_anchors:
            raise ConfigError(
                f"clocks.anchor_skews_ppm needs one skew per anchor ({n_anchors})"
            )
        anchors = tuple(
            ClockParams(
                skew=_number({"skew": skew}, "clocks.anchor_skews_ppm", "skew") * PPM,
                jitter_var=jitter**2,
                delay_err_sigma=delay_err,
            )
            for skew in skews
        )
        return NetworkClocks(anchors, ClockParams(skew=listener_skew, jitter_var=jitter**2))
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError(f"clocks: {err}") from err


def _parse_schedule(data: Dict[str, Any], n_anchors: int) -> Schedule:
    section = _section(data, "schedule")
    order = section["order"]
    if not isinstance(order, list) or not all(
        isinstance(node, int) and not isinstance(node, bool) for node in order
    ):
        raise ConfigError("schedule.order must be a list of anchor ids")
    delay = _number(section, "schedule", "nominal_delay_ms", 0.0, strict=True) * MS
    try:
        schedule = Schedule(tuple(order), delay)
        schedule.check_coverage(n_anchors)
        build_schedule_matrices(schedule, n_anchors)
    except ValueError as err:
        raise ConfigError(f"schedule: {err}") from err
    return schedule


def _parse_calibration(data: Dict[str, Any], sigma: float) -> CalibrationSettings:
    section = _section(data, "calibration")
    return CalibrationSettings(
        retrieval=_flag(section, "calibration", "retrieval"),
        rls=_flag(section, "calibration", "rls"),
        outlier_threshold=_number(section, "calibration", "outlier_threshold_ns", 0.0) * NS,
        apply_final_estimate=_flag(section, "calibration", "apply_final_estimate"),
        noise_scale=sigma,
    )


def _parse_estimation(data: Dict[str, Any]) -> EstimationSettings:
    section = _section(data, "estimation")
    mean = section["listener_prior_mean_m"]
    confidence = _number(section, "estimation", "confidence", 0.0, strict=True)
    if confidence >= 1:
        raise ConfigError(f"estimation.confidence must be < 1, got {confidence:g}")
    return EstimationSettings(
        sigma=_number(section, "estimation", "sigma_ns", 0.0, strict=True) * NS,
        anchor_prior_std=_number(section, "estimation", "anchor_prior_std_m", 0.0, True),
        listener_prior_std=_number(section, "estimation", "listener_prior_std_m", 0.0, True),
        listener_prior_mean=(
            None if mean is None else _point(mean, "estimation.listener_prior_mean_m")
        ),
        batches_per_fix=_integer(
            section["batches_per_fix"], "estimation.batches_per_fix", 1
        ),
        monte_carlo_runs=_integer(
            section["monte_carlo_runs"], "estimation.monte_carlo_runs", 3
        ),
        confidence=confidence,
    )


def config_from_dict(data: Dict[str, Any], source: str = "<dict>") -> ExperimentConfig:
    """
    Validate an experiment dictionary and convert it to SI units.

    Missing keys take the defaults of the `default` preset.

    Raises:
        ConfigError: Naming the offending key
    """
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: configuration must be a JSON object")
    unknown = set(data) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"{source}: unknown keys {', '.join(sorted(unknown))}")

    n_batches = _integer(data.get("n_batches", DEFAULT_N_BATCHES), "n_batches", 1)
    rng_seed = _integer(data.get("rng_seed", DEFAULT_RNG_SEED), "rng_seed", 0)
    geometry = _parse_geometry(data)
    clocks = _parse_clocks(data, geometry.n_anchors, rng_seed)
    estimation = _parse_estimation(data)

    outputs = _section(data, "outputs")
    if not isinstance(outputs["directory"], str) or not outputs["directory"]:
        raise ConfigError("outputs.directory must be a non-empty path")

    channel = _number(_section(data, "noise"), "noise", "channel_noise_ns", 0.0) * NS
    config = ExperimentConfig(
        geometry=geometry,
        clocks=clocks,
        noise=NoiseParams(channel_var=channel**2),
        schedule=_parse_schedule(data, geometry.n_anchors),
        n_batches=n_batches,
        rng_seed=rng_seed,
        calibration=_parse_calibration(data, estimation.sigma),
        estimation=estimation,
        output_directory=Path(outputs["directory"]),
        source=source,
    )
    logging.debug("Loaded experiment configuration from %s", source)
    return config


def load_experiment_config(
    path: Optional[str] = None,
    preset: str = "default",
    seed: Optional[int] = None,
    out: Optional[str] = None,
) -> ExperimentConfig:
    """
    Load a JSON file (or a preset when path is None) with CLI overrides.

    Args:
        path: JSON configuration file
        preset: Built-in preset used when no file is given
        seed: Overrides rng_seed
        out: Overrides outputs.directory

    Raises:
        ConfigError: If the file is missing, unparsable or invalid
    """
    if path is None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        data = copy.deepcopy(PRESETS[preset])
        source = f"<preset {preset}>"
    else:
        try:
            with open(path, "r", encoding="UTF-8") as file:
                data = json.load(file)
        except FileNotFoundError as err:
            raise ConfigError(f"configuration file does not exist: {path}") from err
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON at line {err.lineno}: {err.msg}") from err
        except OSError as err:
            raise ConfigError(f"cannot read configuration {path}: {err}") from err
        source = str(path)

    if isinstance(data, dict):
        if seed is not None:
            data["rng_seed"] = seed
        if out is not None:
            data.setdefault("outputs", {})
            data["outputs"] = dict(data["outputs"] or {}, directory=out)
    return config_from_dict(data, source)
