from .pipeline import (
    CalibrationResult as CalibrationResult,
    CalibrationSettings as CalibrationSettings,
    calibrate_stream as calibrate_stream,
)
from .retrieval import (
    CalibratedBatch as CalibratedBatch,
    DelayVector as DelayVector,
    apply_delay_retrieval as apply_delay_retrieval,
    calibrate_batch as calibrate_batch,
    reject_outliers as reject_outliers,
    skew_residual as skew_residual,
)
from .rls import (
    RlsState as RlsState,
    init_rls as init_rls,
    precompute_gains as precompute_gains,
    rls_gain as rls_gain,
    rls_update as rls_update,
    rls_update_with_gain as rls_update_with_gain,
    stacked_least_squares as stacked_least_squares,
)
