from .bound import (
    ErrorEllipse as ErrorEllipse,
    confidence_scale as confidence_scale,
    ellipse_from_samples as ellipse_from_samples,
    error_ellipse as error_ellipse,
    fisher_information as fisher_information,
    hybrid_crb as hybrid_crb,
    listener_block as listener_block,
    listener_bound as listener_bound,
)
from .map import (
    PositionEstimate as PositionEstimate,
    Prior as Prior,
    build_prior as build_prior,
    map_cost as map_cost,
    map_estimate as map_estimate,
    map_gradient as map_gradient,
    range_jacobian as range_jacobian,
    stacked_schedule_matrix as stacked_schedule_matrix,
)
