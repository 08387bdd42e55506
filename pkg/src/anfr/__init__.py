"""Federated learning simulation with normalizer-free, channel-attentive CNNs."""

__version__ = "0.1.0"
