from .simulate import (
    BatchTruth as BatchTruth,
    LineFit as LineFit,
    MeasurementBatch as MeasurementBatch,
    SimConfig as SimConfig,
    TwrObservation as TwrObservation,
    batch_rng as batch_rng,
    draw_clocks as draw_clocks,
    fit_line as fit_line,
    simulate_batch as simulate_batch,
    simulate_batches as simulate_batches,
    simulate_twr as simulate_twr,
    twr_skew_sweep as twr_skew_sweep,
)
