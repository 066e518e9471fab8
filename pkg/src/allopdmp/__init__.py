"""Energy-structured piecewise deterministic individuals with allometric rates.

Modules: ``rates`` (parameters, flow, admissibility), ``pdmp`` and ``batch``
(exact simulation), ``operator`` (the first-jump kernel and its series),
``population`` (lineages and generation sizes), ``stats`` (estimators,
tail diagnostics, phase diagrams) and ``cli``.
"""

__version__ = "0.1.0"

from .rates import AllometricParams, ParameterError, classify_regime, figure_defaults  # noqa: E402

__all__ = ["AllometricParams", "ParameterError", "classify_regime", "figure_defaults", "__version__"]
