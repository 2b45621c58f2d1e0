from .commands import (
    AnalysisReport,
    CheckpointMismatch,
    MissingTraces,
    RunSummary,
    TrialEvaluator,
    cmd_analyze,
    cmd_bench,
    cmd_export_profiles,
    cmd_optimize,
)
from .config import (
    ExperimentConfig,
    ParseError,
    SUBJECT_PROFILES,
    ValidationError,
    config_hash,
    load_config,
)
