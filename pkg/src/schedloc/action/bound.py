from argparse import Namespace

from ..common import ensure_directory, write_json
from ..config import NS
from ..experiment import ExperimentConfig
from ..models import ConfigError
from .common import hcrb_ellipse


def bound(config: ExperimentConfig, arguments: Namespace) -> None:
    """HCRB listener ellipse at the configured geometry, written to hcrb.json."""
    if config.geometry.listener_true is None:
        raise ConfigError("geometry.listener_m is required to evaluate the bound")

    out = ensure_directory(config.output_directory)
    ellipse = hcrb_ellipse(config)
    record = ellipse.to_record("hcrb")
    record["batches_per_fix"] = config.estimation.batches_per_fix
    record["sigma_ns"] = config.estimation.sigma / NS
    write_json(out / "hcrb.json", record)

    print(
        f"HCRB {ellipse.confidence:.0%} ellipse at "
        f"({ellipse.center[0]:.3f}, {ellipse.center[1]:.3f}) m: semi-axes "
        f"{ellipse.semi_axes[0]:.4f} / {ellipse.semi_axes[1]:.4f} m, "
        f"area {ellipse.area:.3e} m^2 -> {out / 'hcrb.json'}"
    )
