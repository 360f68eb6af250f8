"""Bridge between a fine-tuning loop and the token-record file protocol.

The adapter exports per-token statistics from forward passes as
token-record JSONL, hands them to the reward/signal engine through its
CLI, and applies the returned selections or regularizer values as loss
weights. It deliberately never imports the engine package: the file
formats and the CLI are the whole contract, so trainer and engine can
ride different environments.
"""

from .export import BatchExport, SchemaMismatchError, TokenStats, export_records, stats_from_distribution
from .apply import KeyMismatchError, apply_selection_mask, apply_tea_regularizer

__version__ = "0.1.0"

__all__ = [
    "BatchExport",
    "TokenStats",
    "SchemaMismatchError",
    "KeyMismatchError",
    "export_records",
    "stats_from_distribution",
    "apply_selection_mask",
    "apply_tea_regularizer",
    "__version__",
]
