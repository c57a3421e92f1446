"""Experiment configuration: defaults, TOML ingestion, overrides and hashing.

A config is a TOML file of tables. Every key must appear in
:data:`DEFAULTS`; values are type-checked against the default (``None``
defaults accept any scalar). Overrides use dotted keys such as
``temperature.tau_star=0.04`` and take precedence over the file.
"""

import copy
import hashlib
import json
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .exceptions import InvalidInputError


class ConfigError(InvalidInputError):
    """Malformed, unknown or ill-typed configuration entry."""


DEFAULTS = {
    "experiment": {"kind": "ufm", "n": 5, "d": 3, "seed": 0},
    "init": {
        # crossed_pairs | etf | random_lift | sphere | bipolar_circulant
        "kind": "crossed_pairs",
        "gamma0": 0.3,
        "theta0": 0.7853981633974483,
        "tau0": 0.07,
        "beta0": None,
        "shift": 1,
    },
    "temperature": {
        "kind": "learned_exp",
        "s": 1.0,
        "tau_star": 0.07,
        "tau0": 1e-2,
        "tau1": 5e-2,
        "lr": 1.0,
        "beta_max": 100.0,
        "cap": True,
    },
    "swap": {"kind": "none", "p": 0.0, "renormalize_after_swap": True},
    "integrator": {
        "dt": 1e-2,
        "horizon": 10.0,
        "sample_every": 10,
        "log_samples": 0,
        "log_t_min": 1e-2,
        "schedule": [],
    },
    "reduced": {"rho": None, "bound": False},
    "output": {"dir": "runs/out"},
}

SIMULATE_KINDS = ("ufm", "scalar", "reduced-theta", "reduced-etf", "reduced-gamma")


def _check_type(section, key, value, default):
    where = f"{section}.{key}"
    if default is None:
        if not isinstance(value, (int, float, str)) or isinstance(value, bool):
            raise ConfigError(f"{where} must be a scalar, got {value!r}")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be a list, got {value!r}")
        out = []
        for item in value:
            if not (isinstance(item, list) and len(item) == 2 and all(isinstance(v, (int, float)) for v in item)):
                raise ConfigError(f"{where} entries must be [t_end, dt] pairs, got {item!r}")
            out.append([float(item[0]), float(item[1])])
        return out
    raise ConfigError(f"unsupported default type for {where}")


def merge(base, patch):
    """Return ``base`` updated by the nested mapping ``patch``, validating every key."""
    out = copy.deepcopy(base)
    for section, table in patch.items():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(table, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in table.items():
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            out[section][key] = _check_type(section, key, value, DEFAULTS[section][key])
    return out


def load(path=None):
    """Defaults merged with the TOML file at ``path`` (if any)."""
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return merge(DEFAULTS, data)


def parse_value(text):
    """Parse a command-line value with TOML literal rules, falling back to a string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def override(config, dotted, value):
    """Set ``section.key`` to ``value`` (a parsed Python value)."""
    if "." not in dotted:
        raise ConfigError(f"override key must be section.key, got {dotted!r}")
    section, key = dotted.split(".", 1)
    return merge(config, {section: {key: value}})


def apply_overrides(config, pairs):
    """Apply ``["section.key=value", ...]`` in order."""
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"override must look like section.key=value, got {pair!r}")
        dotted, text = pair.split("=", 1)
        config = override(config, dotted.strip(), parse_value(text.strip()))
    return config


def config_hash(config):
    """SHA-256 of the canonical JSON form of a resolved config.

    The ``output`` table is left out: where a run is written does not change it.
    """
    body = {k: v for k, v in config.items() if k != "output"}
    blob = json.dumps(body, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
