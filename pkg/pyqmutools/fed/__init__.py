from .aggregation import (
    MaskSet,
    generate_masks,
    mask_updates,
    secure_aggregate,
)
from .simulation import (
    ClientSpec,
    FederationSpec,
    FedState,
    RoundRecord,
    fed_round,
    local_update,
    run_simulation,
    unlearn_client,
)

__all__ = [
    "ClientSpec",
    "FedState",
    "FederationSpec",
    "MaskSet",
    "RoundRecord",
    "fed_round",
    "generate_masks",
    "local_update",
    "mask_updates",
    "run_simulation",
    "secure_aggregate",
    "unlearn_client",
]
