from .algebra import (
    Schedule as Schedule,
    ScheduleDiagnosis as ScheduleDiagnosis,
    ScheduleMatrices as ScheduleMatrices,
    anchor_block_selector as anchor_block_selector,
    build_g_matrix as build_g_matrix,
    build_projector as build_projector,
    build_s_matrix as build_s_matrix,
    build_schedule_matrices as build_schedule_matrices,
    kernel_vector as kernel_vector,
    minimal_schedule_length as minimal_schedule_length,
    pseudoinverse as pseudoinverse,
    sender_selection as sender_selection,
    validate_schedule as validate_schedule,
)
