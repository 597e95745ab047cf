"""Physics-based bilinear RC building model (Model B)."""
from .building import (
    BuildingDescription,
    Element,
    Vav,
    Zone,
    desk_building,
    single_zone,
    split_zone_flows,
    vav_zone_matrix,
)
from .identify import (
    GammaFit,
    estimate_gains_v,
    estimate_gamma,
    training_weekends,
    weekend_windows,
)
from .kalman import KalmanConfig, batch_smoothed_state, kalman_filter, kalman_init
from .model import PhysicalParams, RcModel, Simulation, assemble, continuous_matrices, one_step, simulate

__all__ = [
    "BuildingDescription", "Element", "Vav", "Zone", "desk_building", "single_zone",
    "split_zone_flows", "vav_zone_matrix", "GammaFit", "estimate_gains_v", "estimate_gamma",
    "training_weekends", "weekend_windows", "KalmanConfig", "batch_smoothed_state",
    "kalman_filter", "kalman_init", "PhysicalParams", "RcModel", "Simulation", "assemble",
    "continuous_matrices", "one_step", "simulate",
]
