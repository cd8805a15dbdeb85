from argparse import Namespace
from pathlib import Path

from ..common import ensure_directory, read_calibrated_csv, write_json
from ..estimation import ellipse_from_samples
from ..experiment import ExperimentConfig
from ..models import DataError
from .common import localize_fixes, pooled_estimate, schedule_matrices


def localize(config: ExperimentConfig, arguments: Namespace) -> None:
    """
    MAP fixes from a calibrated CSV.

    Kept batches are pooled batches_per_fix at a time; the pooled estimate
    uses every batch. The scatter of the fixes gives the experimental
    ellipse. Writes estimates.json.
    """
    calibrated = read_calibrated_csv(Path(arguments.input), config.schedule)
    if not calibrated:
        raise DataError(f"{arguments.input}: no calibrated batches to localize")

    out = ensure_directory(config.output_directory)
    matrices = schedule_matrices(config)
    prior = config.build_prior()
    fixes = localize_fixes(
        calibrated,
        matrices,
        prior,
        config.estimation.batches_per_fix,
        progress=not arguments.quiet,
    )
    pooled = pooled_estimate(calibrated, matrices, prior)

    converged = [fix.estimate.x_hat for fix in fixes if fix.estimate.converged]
    ellipse = None
    if len(converged) >= 3:
        ellipse = ellipse_from_samples(converged, config.estimation.confidence)

    payload = {
        "batches_per_fix": config.estimation.batches_per_fix,
        "fixes": [
            {
                "batches": [fix.batch_indices[0], fix.batch_indices[-1]],
                **fix.estimate.to_record(),
            }
            for fix in fixes
        ],
        "pooled": None if pooled is None else pooled.to_record(),
        "ellipse": None if ellipse is None else ellipse.to_record("map_experimental"),
    }
    write_json(out / "estimates.json", payload)

    n_failed = len(fixes) - len(converged)
    print(
        f"Localized {len(fixes)} fixes of {config.estimation.batches_per_fix} batches "
        f"({n_failed} did not converge) -> {out / 'estimates.json'}"
    )
    if pooled is not None:
        print(f"  pooled estimate: ({pooled.x_hat[0]:.4f}, {pooled.x_hat[1]:.4f}) m")
    if ellipse is not None:
        print(
            f"  {ellipse.confidence:.0%} ellipse: semi-axes "
            f"{ellipse.semi_axes[0]:.4f} / {ellipse.semi_axes[1]:.4f} m"
        )
