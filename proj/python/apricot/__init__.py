"""Python access to the APRICOT-M acuity pipeline."""

import json

from ._apricot import (
    PipelineError,
    auprc,
    auroc,
    brier,
    calibrate_cv3,
    decide_status,
    head_names,
    isotonic_fit,
    param_count,
    resolve_config,
    run_stage,
    wilcoxon_ranksum,
    youden_threshold,
)


def default_config(**kwargs):
    """Resolved run configuration as a dict."""
    return json.loads(resolve_config(**kwargs))


__all__ = [
    "PipelineError",
    "auprc",
    "auroc",
    "brier",
    "calibrate_cv3",
    "decide_status",
    "default_config",
    "head_names",
    "isotonic_fit",
    "param_count",
    "resolve_config",
    "run_stage",
    "wilcoxon_ranksum",
    "youden_threshold",
]
