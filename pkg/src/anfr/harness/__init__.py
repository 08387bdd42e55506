"""Configuration, orchestration, serialization and reporting."""

from .checkpoint import (decode_checkpoint, describe_checkpoint, encode_checkpoint, load_checkpoint,
                         save_checkpoint)
from .config import AnalysisConfig, DataConfig, ExperimentConfig, parse_config, serialize_config
from .experiment import (OUTPUT_ROOT_ENV, RunManifest, final_metrics, metrics_rows, prepare_data, read_metrics_csv,
                         run, summarize, sweep, write_metrics_csv)
from .report import collect_runs, format_table, report

__all__ = [
    "decode_checkpoint", "describe_checkpoint", "encode_checkpoint", "load_checkpoint", "save_checkpoint",
    "AnalysisConfig", "DataConfig", "ExperimentConfig", "parse_config", "serialize_config", "OUTPUT_ROOT_ENV",
    "RunManifest", "final_metrics", "metrics_rows", "prepare_data", "read_metrics_csv", "run", "summarize", "sweep",
    "write_metrics_csv", "collect_runs", "format_table", "report",
]
