"""Data-proportion detection on toy Markov language models."""

import json

from ._core import (
    Classifier,
    Error,
    MixingLaw,
    Scenario,
    ToyLM,
    beta_from_gamma,
    build_scenario,
    condition_number,
    fit,
    gamma_from_loss,
    invert,
    project_to_simplex,
    render_report,
    run_cli,
)
from ._core import detect as _detect
from ._core import law_diagnostics as _law_diagnostics


def detect(model, classifier, law=None, **config):
    """Run detection and return the report as a dict."""
    return json.loads(_detect(model, classifier, law, **config))


def law_diagnostics(law):
    return json.loads(_law_diagnostics(law))


__all__ = [
    "Classifier",
    "Error",
    "MixingLaw",
    "Scenario",
    "ToyLM",
    "beta_from_gamma",
    "build_scenario",
    "condition_number",
    "detect",
    "fit",
    "gamma_from_loss",
    "invert",
    "law_diagnostics",
    "project_to_simplex",
    "render_report",
    "run_cli",
]
