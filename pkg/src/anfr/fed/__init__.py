"""Federated simulation: client training, aggregation strategies, personalization."""

from .aggregate import (STRATEGIES, ServerState, aggregate, fedadam_update, personal_names,
                        personalization_filter, scaffold_server_c, weighted_mean)
from .simulation import (ClientState, FedConfig, FederationResult, LocalResult, RoundMetrics, batch_indices,
                         client_seed, evaluate, local_train, make_clients, run_federation, sample_participants)

__all__ = [
    "STRATEGIES", "ServerState", "aggregate", "fedadam_update", "personal_names", "personalization_filter",
    "scaffold_server_c", "weighted_mean", "ClientState", "FedConfig", "FederationResult", "LocalResult",
    "RoundMetrics", "batch_indices", "client_seed", "evaluate", "local_train", "make_clients", "run_federation",
    "sample_participants",
]
