"""Noise-transition estimation with structure priors.

Thin Python layer over the C++ core. Matrices are numpy arrays; reports and
configs travel as JSON text.
"""

import json

from ._masklab import (
    build_mask,
    build_transition,
    cli,
    corrupt_labels,
    distill_mask,
    elbo_toy_check,
    estimate_T_anchor,
    forward_loss,
    noisy_posterior,
    strip_timing,
    structure_f1,
    synth_dataset,
    tempered_sigmoid,
    transition_error,
)
from ._masklab import run_comparison as _run_comparison

__all__ = [
    "build_mask",
    "build_transition",
    "cli",
    "compare",
    "corrupt_labels",
    "distill_mask",
    "elbo_toy_check",
    "estimate_T_anchor",
    "forward_loss",
    "noisy_posterior",
    "strip_timing",
    "structure_f1",
    "synth_dataset",
    "tempered_sigmoid",
    "transition_error",
]


def compare(config=None, jobs=1):
    """Run the multi-method comparison and return the report as a dict."""
    text = json.dumps(config or {})
    return json.loads(_run_comparison(text, jobs))
