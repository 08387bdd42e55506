"""Sample-level DP-SGD and an RDP accountant for the subsampled Gaussian mechanism."""

from .accountant import (DEFAULT_ORDERS, PrivacyLedger, rdp_epsilon, rdp_subsampled_gaussian, rdp_to_epsilon)
from .mechanism import (DpConfig, check_dp_eligible, clip_factors, clip_per_sample, dp_local_step,
                        noise_and_average, per_sample_gradients, private_gradients)

__all__ = [
    "DEFAULT_ORDERS", "PrivacyLedger", "rdp_epsilon", "rdp_subsampled_gaussian", "rdp_to_epsilon", "DpConfig",
    "check_dp_eligible", "clip_factors", "clip_per_sample", "dp_local_step", "noise_and_average",
    "per_sample_gradients", "private_gradients",
]
