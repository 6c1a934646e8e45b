"""Misconfiguration detection for AWS SAM templates."""

from samcheck.template import ConfigDocument, ParameterPath, enumerate_parameters, load_template, parse_template

__version__ = "0.1.0"

__all__ = ["ConfigDocument", "ParameterPath", "enumerate_parameters", "load_template", "parse_template", "__version__"]
