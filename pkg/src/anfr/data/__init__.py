"""Synthetic data with controllable heterogeneity and federated partitioners."""

from .datasets import (ClientShard, Dataset, background_textures, class_templates, client_palettes, device_response,
                       foreground_mask, gen_colorshift, shape_oracle, standardize_inputs,
                       label_histogram, make_shard)
from .partition import (SCHEMES, PartitionConfig, PartitionReport, largest_remainder, partition,
                        partition_dirichlet, partition_iid, partition_k_classes, partition_quantity_skew,
                        partition_stats, read_shard_index, train_test_split, validate_shards, write_shard_index)

__all__ = [
    "ClientShard", "Dataset", "background_textures", "class_templates", "client_palettes", "device_response",
    "foreground_mask", "gen_colorshift", "shape_oracle", "standardize_inputs",
    "label_histogram", "make_shard", "SCHEMES", "PartitionConfig", "PartitionReport", "largest_remainder",
    "partition", "partition_dirichlet", "partition_iid", "partition_k_classes", "partition_quantity_skew",
    "partition_stats", "read_shard_index", "train_test_split", "validate_shards", "write_shard_index",
]
