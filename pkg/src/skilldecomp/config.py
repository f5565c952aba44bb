"""Flat ``section.key = value`` configuration files.

Blank lines and ``#`` comments are ignored.  Values are read as Python
literals where possible (numbers, booleans, tuples) and as plain strings
otherwise.
"""
from __future__ import annotations

import ast
import os
from importlib import resources

from .errors import ConfigError, InputFileError

__all__ = ["KNOWN_KEYS", "load_config", "parse_config", "bundled_config"]

KNOWN_KEYS = {
    "data": {"min_scores", "skip_bad_rows"},
    "fit": {"tol", "max_iter", "freeze_effects", "phi_mode", "variance_method", "spacing",
            "reset_chain_at_tournament", "max_knots", "min_key_obs"},
    "simulate": None,  # checked against GeneratorConfig
    "residuals": set(),
    "counterfactual": {"player", "events", "donors"},
    "pairing": {"focal", "suite", "adjust_prior_rounds", "final_group_size", "robust"},
    "compare": {"player", "kind", "n_boot", "statistic"},
    "report": {"player", "styles", "majors", "focal"},
}


def _value(text):
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_config(text: str, source: str = "<config>") -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep or "." not in key:
            raise ConfigError(f"{source}:{n}: expected 'section.key = value'")
        section, name = key.split(".", 1)
        if section not in KNOWN_KEYS:
            raise ConfigError(f"{source}:{n}: unknown section {section!r}")
        allowed = KNOWN_KEYS[section]
        if allowed is not None and name not in allowed:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
        out.setdefault(section, {})[name] = _value(val.strip())
    return out


def bundled_config(name: str) -> str:
    ref = resources.files("skilldecomp") / "configs" / f"{name}.conf"
    if not ref.is_file():
        raise InputFileError(f"bundled config {name!r}")
    return ref.read_text()


def load_config(path_or_name) -> dict:
    """Read a config file, or a bundled one by bare name (e.g. ``desk``)."""
    if path_or_name is None:
        return {}
    p = str(path_or_name)
    if os.path.isfile(p):
        with open(p) as fh:
            return parse_config(fh.read(), p)
    if os.sep not in p and not p.endswith(".conf"):
        return parse_config(bundled_config(p), p)
    raise InputFileError(p)
