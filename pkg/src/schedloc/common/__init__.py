from .common import (
    ensure_directory as ensure_directory,
    read_calibrated_csv as read_calibrated_csv,
    read_json as read_json,
    read_matrix_csv as read_matrix_csv,
    read_measurements_csv as read_measurements_csv,
    write_calibrated_csv as write_calibrated_csv,
    write_json as write_json,
    write_matrix_csv as write_matrix_csv,
    write_measurements_csv as write_measurements_csv,
    write_rejected_csv as write_rejected_csv,
    write_rls_trace_csv as write_rls_trace_csv,
    write_table_csv as write_table_csv,
)
