"""Run configuration: flat ``key = value`` text files with array literals.

One file per run.  Values are Python literals (numbers, complex numbers,
strings, nested lists); ``#`` starts a comment.  Units are natural units
(c = hbar = 1): ``dx`` and ``1/mass`` are lengths, ``d_eps`` is a proper
time, frequencies come out in inverse length.

Recognised keys (see README for the full schema):

    sites, dx, mass                 lattice and field mass
    steps, d_eps                    number of leaves to advance, proper step
    foliation                       "equal_time" | "boosted" | "lapse_profile" | "dynamic"
    boost_v                         boost velocity for "boosted"
    lapse_table                     nested list, one row of N_i >= 1 per step
    state_terms                     [[amplitude, [label_coeffs, ...]], ...]
    field_mode_coords               initial mode coordinates c_n (zero-padded)
    field_site_values               alternative: initial site values
    seed, ensemble_size             ensemble mode
    ensemble_times                  label times at which to report KS distances
    out                             output path (CLI --out overrides)
    max_dphi                        per-step field increment bound
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError

__all__ = ["RunConfig", "loads", "load"]

_DEFAULTS = {
    "sites": None,
    "dx": None,
    "mass": None,
    "steps": 100,
    "d_eps": None,
    "foliation": "equal_time",
    "boost_v": 0.0,
    "lapse_table": None,
    "state_terms": None,
    "field_mode_coords": None,
    "field_site_values": None,
    "seed": 0,
    "ensemble_size": 10000,
    "ensemble_times": (),
    "out": None,
    "max_dphi": 1e3,
}

_REQUIRED = ("sites", "dx", "mass", "d_eps", "state_terms")


@dataclass(frozen=True)
class RunConfig:
    """Validated parameters of one simulation or ensemble run."""

    sites: int
    dx: float
    mass: float
    d_eps: float
    state_terms: tuple
    steps: int = 100
    foliation: str = "equal_time"
    boost_v: float = 0.0
    lapse_table: tuple = None
    field_mode_coords: tuple = None
    field_site_values: tuple = None
    seed: int = 0
    ensemble_size: int = 10000
    ensemble_times: tuple = ()
    out: str = None
    max_dphi: float = 1e3

    def __post_init__(self):
        if self.sites < 4 or self.sites % 2:
            raise ConfigError("sites must be an even number >= 4")
        if self.dx <= 0:
            raise ConfigError("dx must be positive")
        if self.mass <= 0:
            raise ConfigError("mass must be positive")
        if self.d_eps <= 0:
            raise ConfigError("d_eps must be positive")
        if self.steps < 0:
            raise ConfigError("steps must be nonnegative")
        if self.foliation not in ("equal_time", "boosted", "lapse_profile", "dynamic"):
            raise ConfigError(f"unknown foliation {self.foliation!r}")
        if self.foliation == "boosted" and not -1.0 < self.boost_v < 1.0:
            raise ConfigError("boost_v must satisfy |v| < 1")
        if self.foliation == "lapse_profile":
            if self.lapse_table is None:
                raise ConfigError("lapse_profile needs lapse_table")
            table = np.asarray(self.lapse_table, dtype=float)
            if table.ndim != 2 or table.shape[1] != self.sites or np.any(table < 1.0):
                raise ConfigError("lapse_table rows must have one value >= 1 per site")
        if not self.state_terms:
            raise ConfigError("state_terms must not be empty")
        if not any(abs(complex(a)) > 0 for a, _ in self.state_terms):
            raise ConfigError("state amplitudes must not all be zero")
        for _, labels in self.state_terms:
            for coeffs in labels:
                if len(coeffs) > self.sites:
                    raise ConfigError("label coefficient vector longer than the basis")
        if self.field_mode_coords is not None and self.field_site_values is not None:
            raise ConfigError("give field_mode_coords or field_site_values, not both")
        if self.field_site_values is not None and len(self.field_site_values) != self.sites:
            raise ConfigError("field_site_values needs one value per site")
        if self.field_mode_coords is not None and len(self.field_mode_coords) > self.sites:
            raise ConfigError("field_mode_coords longer than the basis")
        if self.ensemble_size < 1:
            raise ConfigError("ensemble_size must be positive")
        if any(t < 0 for t in self.ensemble_times):
            raise ConfigError("ensemble_times must be nonnegative")
        if self.max_dphi <= 0:
            raise ConfigError("max_dphi must be positive")

    def padded_mode_coords(self):
        """Initial mode coordinates zero-padded to the basis dimension."""
        coords = np.zeros(self.sites)
        if self.field_mode_coords is not None:
            coords[: len(self.field_mode_coords)] = self.field_mode_coords
        return coords

    def padded_label(self, coeffs):
        """A label coefficient vector zero-padded to the basis dimension."""
        out = np.zeros(self.sites, dtype=complex)
        out[: len(coeffs)] = coeffs
        return out

    def override(self, **kwargs):
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **kwargs) if kwargs else self


def _freeze(value):
    if isinstance(value, list):
        return tuple(_freeze(v) for v in value)
    return value


def loads(text):
    """Parse config text into a RunConfig.

    Raises ConfigError for unknown keys, bad literals, or invariant
    violations.
    """
    values = dict(_DEFAULTS)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, literal = line.partition("=")
        key = key.strip()
        if key not in values:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _freeze(ast.literal_eval(literal.strip()))
        except (ValueError, SyntaxError) as err:
            raise ConfigError(f"line {lineno}: bad literal for {key}: {err}") from err
    missing = [k for k in _REQUIRED if values[k] is None]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    return RunConfig(**values)


def load(path):
    """Read and parse a config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return loads(fh.read())
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
