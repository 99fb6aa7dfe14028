"""Run configuration: YAML loading, field-level validation and object construction."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .lattice import Grid, external_potential, initial_wavefunction, pair_potential

__all__ = ["load_config", "config_hash", "Section", "build_grid", "build_potential", "build_initial",
           "COMMANDS", "SCHEMA_VERSION"]

SCHEMA_VERSION = 1

COMMANDS = ("evolve-exact", "evolve-hartree", "converge-factorized", "converge-coherent",
            "fluctuations", "hierarchy", "scattering", "probes")


class Section:
    """Typed accessors over a mapping that report the dotted path of a bad field."""

    def __init__(self, data, path: str = ""):
        if not isinstance(data, dict):
            raise ConfigError("expected a mapping", path or "<root>")
        self.data = data
        self.path = path

    def _name(self, key):
        return f"{self.path}.{key}" if self.path else key

    def has(self, key) -> bool:
        return key in self.data

    def raw(self, key, default=None):
        return self.data.get(key, default)

    def section(self, key, required=True) -> "Section":
        if key not in self.data:
            if required:
                raise ConfigError("missing required section", self._name(key))
            return None
        return Section(self.data[key], self._name(key))

    def _get(self, key, default, required):
        if key not in self.data:
            if required and default is None:
                raise ConfigError("missing required field", self._name(key))
            return default
        return self.data[key]

    def number(self, key, default=None, required=True, positive=False, nonneg=False, integer=False):
        val = self._get(key, default, required)
        if val is None:
            return None
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"expected a number, got {val!r}", self._name(key))
        if integer and (not float(val).is_integer()):
            raise ConfigError(f"expected an integer, got {val!r}", self._name(key))
        if not np.isfinite(val):
            raise ConfigError("must be finite", self._name(key))
        if positive and val <= 0:
            raise ConfigError(f"must be positive, got {val!r}", self._name(key))
        if nonneg and val < 0:
            raise ConfigError(f"must be non-negative, got {val!r}", self._name(key))
        return int(val) if integer else float(val)

    def integer(self, key, default=None, required=True, positive=False, nonneg=False):
        return self.number(key, default, required, positive, nonneg, integer=True)

    def numbers(self, key, default=None, required=True, integer=False, nonneg=False, positive=False):
        vals = self._get(key, default, required)
        if vals is None:
            return None
        if not isinstance(vals, list) or not vals:
            raise ConfigError("expected a non-empty list", self._name(key))
        sub = Section({str(i): v for i, v in enumerate(vals)}, self._name(key))
        return [sub.number(str(i), integer=integer, nonneg=nonneg, positive=positive) for i in range(len(vals))]

    def string(self, key, default=None, required=True, choices=None):
        val = self._get(key, default, required)
        if val is None:
            return None
        if not isinstance(val, str):
            raise ConfigError(f"expected a string, got {val!r}", self._name(key))
        if choices is not None and val not in choices:
            raise ConfigError(f"must be one of {', '.join(choices)}; got {val!r}", self._name(key))
        return val

    def boolean(self, key, default=None, required=True):
        val = self._get(key, default, required)
        if val is None:
            return None
        if not isinstance(val, bool):
            raise ConfigError(f"expected true or false, got {val!r}", self._name(key))
        return val

    def params(self, exclude=("family",)) -> dict:
        return {k: v for k, v in self.data.items() if k not in exclude}


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", "--config") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"not valid YAML: {exc}", "<root>") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping", "<root>")
    return data


def config_hash(data: dict) -> str:
    """SHA-256 of the canonical JSON form of the config."""
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def build_grid(cfg: Section) -> Grid:
    g = cfg.section("grid")
    dim = g.integer("dim", positive=True)
    m = g.integer("m", positive=True)
    spacing = g.number("spacing", default=1.0, required=False, positive=True)
    if dim > 3:
        raise ConfigError("dimensions above 3 are not supported", "grid.dim")
    return Grid(dim, m, spacing)


def build_potential(cfg: Section, grid: Grid, seed: int = 0):
    p = cfg.section("potential")
    family = p.string("family", choices=("zero", "gaussian", "box", "kronecker_delta", "random", "table"))
    required = {"gaussian": ("amplitude", "width"), "box": ("amplitude", "radius"),
                "kronecker_delta": ("coupling",), "random": ("amplitude",), "table": ("path",)}
    params = {}
    for key in required.get(family, ()):
        params[key] = p.string(key) if key == "path" else p.number(key, positive=key in ("width",))
    if family == "random":
        params["seed"] = p.integer("seed", default=seed, required=False, nonneg=True)
    ext = None
    e = cfg.section("external", required=False)
    if e is not None:
        efam = e.string("family", choices=("zero", "constant", "harmonic"))
        eparams = {}
        if efam == "constant":
            eparams["value"] = e.number("value")
        elif efam == "harmonic":
            eparams["strength"] = e.number("strength", nonneg=True)
            if e.has("center"):
                eparams["center"] = e.raw("center")
        ext = external_potential(grid, efam, **eparams)
    return pair_potential(grid, family, ext, **params)


def build_initial(cfg: Section, grid: Grid):
    s = cfg.section("initial")
    family = s.string("family", choices=("uniform", "plane_wave", "gaussian_packet", "modes"))
    if family == "gaussian_packet":
        s.number("width", positive=True)
        if "center" not in s.data:
            raise ConfigError("missing required field", "initial.center")
    elif family == "plane_wave" and "k" not in s.data:
        raise ConfigError("missing required field", "initial.k")
    elif family == "modes" and "amplitudes" not in s.data:
        raise ConfigError("missing required field", "initial.amplitudes")
    try:
        return initial_wavefunction(grid, family, **s.params())
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid parameters: {exc}", "initial") from None
