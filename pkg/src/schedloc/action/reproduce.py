import logging
from argparse import Namespace
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, NamedTuple, Sequence

import numpy as np
from tqdm import tqdm

from ..calibration import CalibratedBatch, apply_delay_retrieval, calibrate_stream
from ..common import (
    ensure_directory,
    write_json,
    write_rls_trace_csv,
    write_table_csv,
)
from ..config import (
    BENEFIT_MAX_CALIBRATED_BIAS,
    BENEFIT_MIN_RAW_BIAS,
    BENEFIT_N_BATCHES,
    BENEFIT_OUTLIER_THRESHOLD,
    BENEFIT_RAW_BATCHES,
    BENEFIT_SKEW,
    FIG2_DELAY_GRID_MS,
    FIG2_MIN_R_SQUARED,
    FIG2_SLOPE_TOLERANCE,
    FIG3_NOMINAL_STD_RANGE,
    FIG3_RETRIEVED_STD_RANGE,
    FIG4_MAX_SKEW_ERROR,
    FIG6_ERROR_BAR_SIGMAS,
    FIG6_LISTENERS,
    FIG6_MAX_BIAS,
    FIG6_PSD_TOLERANCE,
    MS,
    NS,
    PPM,
    SPEED_OF_LIGHT,
)
from ..estimation import ErrorEllipse, error_ellipse
from ..experiment import ExperimentConfig
from ..models import AcceptanceFailure, NetworkClocks, ranges_from_geometry
from ..schedule import ScheduleMatrices
from ..simkit import fit_line, simulate_batches, twr_skew_sweep
from .common import (
    MonteCarloResult,
    fix_bias,
    listener_hcrb,
    localize_fixes,
    run_map_monte_carlo,
    schedule_matrices,
)


class Check(NamedTuple):
    name: str
    passed: bool
    detail: str

    def __str__(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


#########################################################################################
# Skew Error Linearity
#########################################################################################


def reproduce_fig2(config: ExperimentConfig, out: Path, progress: bool) -> List[Check]:
    """Two-way ranging skew error over a grid of response delays."""
    clock1, clock2, clock3 = config.clocks.anchors[:3]
    rho12, rho13, rho23 = config.geometry.anchor_ranges()[:3]
    start, stop, points = FIG2_DELAY_GRID_MS
    deltas = np.linspace(start, stop, points) * MS

    errors = twr_skew_sweep(rho12, rho13, rho23, clock1, clock2, clock3, deltas)
    fit = fit_line(deltas, errors)
    expected = 2 * clock3.skew - clock1.skew - clock2.skew

    write_table_csv(
        out / "twr_sweep.csv",
        ["delta_ms", "error_ns"],
        [(delta / MS, error / NS) for delta, error in zip(deltas, errors)],
    )
    write_json(out / "fit.json", {**fit._asdict(), "expected_slope": expected})

    slope_error = abs(fit.slope - expected) / abs(expected)
    return [
        Check("linearity", fit.r_squared > FIG2_MIN_R_SQUARED, f"R^2 = {fit.r_squared:.6f}"),
        Check(
            "slope",
            slope_error <= FIG2_SLOPE_TOLERANCE,
            f"{fit.slope / PPM:.4f} ppm vs 2 skew3 - skew1 - skew2 = {expected / PPM:.4f} ppm",
        ),
    ]


#########################################################################################
# Delay Retrieval
#########################################################################################


def reproduce_fig3(config: ExperimentConfig, out: Path, progress: bool) -> List[Check]:
    """Timing residual spread with and without the delay payload."""
    matrices = schedule_matrices(config)
    batches = simulate_batches(config.to_sim_config(), matrices, progress=progress)
    propagation = matrices.S @ ranges_from_geometry(config.geometry).values / SPEED_OF_LIGHT

    nominal = np.array([batch.y - batch.schedule.nominal_delays() for batch in batches])
    retrieved = np.array(
        [
            batch.y - apply_delay_retrieval(batch, config.schedule.nominal_delay).values
            for batch in batches
        ]
    )
    nominal -= propagation
    retrieved -= propagation

    write_table_csv(
        out / "residuals.csv",
        ["batch", "k", "nominal_ns", "retrieved_ns"],
        [
            (batch.batch_index, k, nominal[row, k] / NS, retrieved[row, k] / NS)
            for row, batch in enumerate(batches)
            for k in range(matrices.n_measurements)
        ],
    )

    nominal_std, retrieved_std = float(nominal.std()), float(retrieved.std())
    write_json(
        out / "residual_std.json",
        {"nominal_ns": nominal_std / NS, "retrieved_ns": retrieved_std / NS},
    )
    low, high = FIG3_NOMINAL_STD_RANGE
    retrieved_low, retrieved_high = FIG3_RETRIEVED_STD_RANGE
    return [
        Check(
            "nominal delay",
            low <= nominal_std <= high,
            f"residual std {nominal_std / NS:.4f} ns in [{low / NS}, {high / NS}]",
        ),
        Check(
            "retrieved delay",
            retrieved_low <= retrieved_std <= retrieved_high,
            f"residual std {retrieved_std / NS:.4f} ns in "
            f"[{retrieved_low / NS}, {retrieved_high / NS}]",
        ),
    ]


#########################################################################################
# Skew Estimation
#########################################################################################


def _skew_error_history(
    config: ExperimentConfig,
    matrices: ScheduleMatrices,
    retrieval: bool,
    seed: int,
) -> tuple:
    settings = replace(config.calibration, retrieval=retrieval, rls=True)
    sim = config.to_sim_config(rng_seed=seed)
    batches = simulate_batches(sim, matrices)
    result = calibrate_stream(batches, matrices, config.geometry.anchor_ranges(), settings)

    history = np.array([row[1 : 1 + matrices.n_anchors] for row in result.trace])
    if len(history) < config.n_batches + 1:
        # Rejected batches leave the estimate unchanged
        padding = np.repeat(history[-1:], config.n_batches + 1 - len(history), axis=0)
        history = np.vstack([history, padding])
    return history - sim.theta_true, result


def reproduce_fig4(config: ExperimentConfig, out: Path, progress: bool) -> List[Check]:
    """RLS convergence and the variance gain of delay retrieval over many seeds."""
    matrices = schedule_matrices(config)
    runs = config.estimation.monte_carlo_runs

    variances = {}
    final_error = None
    for retrieval in (True, False):
        errors = []
        label = "RLS with retrieval" if retrieval else "RLS without retrieval"
        for run in tqdm(range(runs), desc=label, unit="seed", disable=not progress):
            history, result = _skew_error_history(
                config, matrices, retrieval, config.rng_seed + run
            )
            errors.append(history)
            if retrieval and run == 0:
                write_rls_trace_csv(out / "rls_trace.csv", result)
                final_error = np.abs(history[-1])
        variances[retrieval] = np.var(np.array(errors), axis=0).mean(axis=1)

    write_table_csv(
        out / "variance.csv",
        ["n", "variance_retrieved_ppm2", "variance_nominal_ppm2"],
        [
            (n, variances[True][n] / PPM**2, variances[False][n] / PPM**2)
            for n in range(config.n_batches + 1)
        ],
    )

    faster = bool(np.all(variances[True][1:] < variances[False][1:]))
    worst = float(final_error.max())
    return [
        Check(
            "convergence",
            worst < FIG4_MAX_SKEW_ERROR,
            f"max |theta_hat - theta| = {worst / PPM:.4f} ppm after {config.n_batches} batches",
        ),
        Check(
            "retrieval variance",
            faster,
            f"variance lower with retrieval at every n over {runs} seeds "
            f"(final {variances[True][-1] / PPM**2:.3e} vs "
            f"{variances[False][-1] / PPM**2:.3e} ppm^2)",
        ),
    ]


#########################################################################################
# MAP Scatter Against the Bound
#########################################################################################


def _benefit_clocks(config: ExperimentConfig) -> NetworkClocks:
    """Configured clocks with anchor skews of +-BENEFIT_SKEW in alternating sign."""
    anchors = tuple(
        replace(clock, skew=BENEFIT_SKEW if index % 2 == 0 else -BENEFIT_SKEW)
        for index, clock in enumerate(config.clocks.anchors)
    )
    return replace(config.clocks, anchors=anchors)


def calibration_benefit(
    config: ExperimentConfig, matrices: ScheduleMatrices, progress: bool
) -> List[Check]:
    """Raw versus RLS-calibrated fixes under +-20 ppm anchor skews."""
    clocks = _benefit_clocks(config)
    settings = replace(
        config.calibration,
        retrieval=True,
        rls=True,
        outlier_threshold=BENEFIT_OUTLIER_THRESHOLD,
    )
    prior = config.build_prior()
    per_fix = config.estimation.batches_per_fix

    checks = []
    for listener in FIG6_LISTENERS:
        listener_config = config.with_listener(listener)
        sim = listener_config.to_sim_config(n_batches=BENEFIT_N_BATCHES, clocks=clocks)
        batches = simulate_batches(sim, matrices, progress=progress)

        raw = [
            CalibratedBatch(batch.batch_index, batch.y, batch.schedule.nominal_delays())
            for batch in batches[:BENEFIT_RAW_BATCHES]
        ]
        raw_fixes = localize_fixes(raw, matrices, prior, per_fix)
        result = calibrate_stream(
            batches, matrices, config.geometry.anchor_ranges(), settings
        )
        calibrated_fixes = localize_fixes(result.batches, matrices, prior, per_fix)

        raw_bias = fix_bias(raw_fixes, np.asarray(listener))
        raw_failed = any(not fix.estimate.converged for fix in raw_fixes)
        calibrated_bias = fix_bias(calibrated_fixes, np.asarray(listener))
        checks.append(
            Check(
                f"raw bias at {listener}",
                raw_bias > BENEFIT_MIN_RAW_BIAS or raw_failed,
                f"{raw_bias:.3f} m over {len(raw_fixes)} fixes"
                f"{' (non-converged fixes)' if raw_failed else ''}",
            )
        )
        checks.append(
            Check(
                f"calibrated bias at {listener}",
                calibrated_bias < BENEFIT_MAX_CALIBRATED_BIAS,
                f"{calibrated_bias:.4f} m < {BENEFIT_MAX_CALIBRATED_BIAS} m "
                f"over {len(calibrated_fixes)} fixes",
            )
        )
    return checks


def bound_checks(
    listener: Sequence[float],
    bound: np.ndarray,
    bound_ellipse: ErrorEllipse,
    monte_carlo: MonteCarloResult,
) -> List[Check]:
    """The bound must not exceed the simulated scatter beyond its sampling error."""
    area_margin = FIG6_ERROR_BAR_SIGMAS * monte_carlo.area_standard_error
    eigenvalues, eigenvectors = np.linalg.eigh(monte_carlo.covariance - bound)
    smallest = float(eigenvalues[0])
    trace = float(np.trace(monte_carlo.covariance))
    variance_margin = FIG6_ERROR_BAR_SIGMAS * monte_carlo.variance_standard_error(
        eigenvectors[:, 0]
    )
    allowed = max(FIG6_PSD_TOLERANCE * trace, variance_margin)
    return [
        Check(
            f"bound area at {listener}",
            bound_ellipse.area < monte_carlo.ellipse.area + area_margin,
            f"HCRB {bound_ellipse.area:.3e} m^2 vs simulated "
            f"{monte_carlo.ellipse.area:.3e} +- {area_margin:.1e} m^2",
        ),
        Check(
            f"bound dominance at {listener}",
            smallest > -allowed,
            f"smallest eigenvalue of cov - HCRB {smallest:.3e} m^2 > -{allowed:.1e} m^2 "
            f"(trace {trace:.3e} m^2)",
        ),
    ]


def reproduce_fig6(config: ExperimentConfig, out: Path, progress: bool) -> List[Check]:
    """Monte-Carlo MAP scatter and HCRB ellipses at both listener positions."""
    matrices = schedule_matrices(config)
    checks = []
    ellipses = []
    for position, listener in enumerate(FIG6_LISTENERS, 1):
        listener_config = config.with_listener(listener)
        bound = listener_hcrb(listener_config, matrices)
        bound_ellipse = error_ellipse(bound, listener, config.estimation.confidence)
        monte_carlo = run_map_monte_carlo(listener_config, matrices, progress=progress)

        write_table_csv(
            out / f"estimates_{position}.csv",
            ["run", "x_m", "y_m", "converged"],
            [
                (run, x, y, int(converged))
                for run, ((x, y), converged) in enumerate(
                    zip(monte_carlo.estimates, monte_carlo.converged)
                )
            ],
        )
        ellipses.append({"listener_m": list(listener), **bound_ellipse.to_record("hcrb")})
        ellipses.append(
            {"listener_m": list(listener), **monte_carlo.ellipse.to_record("simulated")}
        )

        checks.append(
            Check(
                f"bias at {listener}",
                monte_carlo.bias <= FIG6_MAX_BIAS,
                f"{monte_carlo.bias:.4f} m over {len(monte_carlo.estimates)} runs",
            )
        )
        checks.extend(bound_checks(listener, bound, bound_ellipse, monte_carlo))

    write_json(out / "ellipses.json", {"ellipses": ellipses})
    checks.extend(calibration_benefit(config, matrices, progress))
    return checks


#########################################################################################
# Action
#########################################################################################

FIGURE_MAP: Dict[str, Callable[[ExperimentConfig, Path, bool], List[Check]]] = {
    "fig2": reproduce_fig2,
    "fig3": reproduce_fig3,
    "fig4": reproduce_fig4,
    "fig6": reproduce_fig6,
}


def reproduce(config: ExperimentConfig, arguments: Namespace) -> None:
    """
    Run one figure's experiment and check it against its acceptance thresholds.

    Writes the artifacts and report.txt to <out>/<figure>/.

    Raises:
        AcceptanceFailure: If any check fails
    """
    figure = arguments.figure.lower()
    out = ensure_directory(Path(config.output_directory) / figure)
    logging.info("Reproducing %s into %s", figure, out)

    checks = FIGURE_MAP[figure](config, out, not arguments.quiet)

    report = out / "report.txt"
    with open(report, "w", encoding="UTF-8") as file:
        for check in checks:
            file.write(f"{check}\n")
    for check in checks:
        print(check)

    failed = [check.name for check in checks if not check.passed]
    if failed:
        raise AcceptanceFailure(f"{figure}: failed {', '.join(failed)} (see {report})")
    print(f"{figure}: all {len(checks)} checks passed -> {report}")
