import logging
from argparse import Namespace

from ..common import ensure_directory, write_json, write_matrix_csv, write_measurements_csv
from ..experiment import ExperimentConfig
from ..models import ConfigError
from ..simkit import simulate_batches
from .common import measurement_summary, schedule_matrices


def simulate(config: ExperimentConfig, arguments: Namespace) -> None:
    """
    Generate a measurement stream and write it as CSV.

    Writes measurements.csv and truth.json; with --export-matrices also
    S.csv, S_pinv.csv and G.csv.
    """
    if config.geometry.listener_true is None:
        raise ConfigError("geometry.listener_m is required to simulate measurements")

    out = ensure_directory(config.output_directory)
    matrices = schedule_matrices(config)
    sim = config.to_sim_config()
    batches = simulate_batches(sim, matrices, progress=not arguments.quiet)

    measurements_path = out / "measurements.csv"
    write_measurements_csv(measurements_path, batches)
    write_json(
        out / "truth.json",
        {
            "theta_true": sim.theta_true,
            "listener_m": config.geometry.listener_true,
            "anchors_m": config.geometry.anchors,
            "rng_seed": sim.rng_seed,
        },
    )

    if getattr(arguments, "export_matrices", False):
        write_matrix_csv(out / "S.csv", matrices.S)
        write_matrix_csv(out / "S_pinv.csv", matrices.S_pinv)
        write_matrix_csv(out / "G.csv", matrices.G)
        logging.info("Exported schedule matrices to %s", out)

    print(
        f"Simulated {len(batches)} batches x {config.schedule.n_measurements} "
        f"measurements -> {measurements_path}"
    )
    print("Offsets from the expected propagation time:")
    for line in measurement_summary(batches, config.geometry):
        print(line)
