"""Class selectivity and channel-attention instrumentation."""

from .selectivity import (DEGENERACY_TOL, NUM_BINS, AttentionRecord, CsiDistribution, CsiRecord,
                          attention_degenerate, attention_stats, capture_class_conditional, csi, csi_distribution,
                          csi_records, default_probes, is_degenerate, moment_skewness, write_attention_csv,
                          write_histogram_csv)

__all__ = [
    "DEGENERACY_TOL", "NUM_BINS", "AttentionRecord", "CsiDistribution", "CsiRecord", "attention_degenerate",
    "attention_stats", "capture_class_conditional", "csi", "csi_distribution", "csi_records", "default_probes",
    "is_degenerate", "moment_skewness", "write_attention_csv", "write_histogram_csv",
]
