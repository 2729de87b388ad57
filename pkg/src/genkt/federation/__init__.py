"""Multi-device transfer through a label aggregator."""

from .network import AGGREGATOR, SERVER, RoutingError, SimulatedNetwork, device
from .protocol import (
    SDGKT,
    T_FULL,
    T_PRIVATE,
    T_TRANSFER,
    TDGKT,
    AggregationError,
    Federation,
    FederationConfig,
    FederationResult,
    aggregate,
    bootstrap,
    ensemble_eval,
    fine_tune_devices,
    init_devices,
    run_round_sdgkt,
    run_round_tdgkt,
)
