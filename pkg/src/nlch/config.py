"""Run configuration: a flat ``[section]`` / ``key = value`` format.

Grammar, one item per line::

    # comment (also allowed after a value)
    [section]
    key = value

Values are Python literals (numbers, strings, lists, tuples, True/False);
``true``/``false`` and bare words such as ``nonlocal`` are accepted too.
Every key must be known, may appear once, and every section at most once.
Sections and keys (defaults in parentheses)::

    [grid]     d (1), points (128), extent (1.0), dealias (false)
    [model]    species (2), L (1.0: scalar fills every off-diagonal entry, or a
               matrix), C ("identity" or a matrix), kind (nonlocal), eps (0.1),
               support ((0.25, 0.75)), gradient_coefficient (1.0),
               min_annulus_cells (3.0)
    [scheme]   tau (required), outer_tol, outer_max, s2_tol, s2_max, s2_damping,
               cg_tol, cg_max, method, s2_method, outer_damping, retry
    [initial]  preset (perturbed_uniform), seed (0), amplitude (0.1),
               max_mode (4), fractions (none), alpha (1.0), width (0.05)
    [run]      t_final (0.0), max_steps (none)
    [output]   directory (out), snapshot_every (0: initial and final only),
               strict (true), threads (1)

The environment variable NLCH_THREADS overrides ``output.threads``.
"""
from __future__ import annotations

import ast
import os
import re
import warnings
from dataclasses import asdict, dataclass, replace

import numpy as np

from .grid import TorusGrid
from .initial import PRESETS, make_initial
from .model import InteractionWarning, ModelParams, State, interaction_operator
from .scheme import SchemeParams

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config", "initial_state",
           "build_grid", "build_model", "build_scheme", "build_operator_for"]


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


_SCHEMA = {
    "grid": {"d": 1, "points": 128, "extent": 1.0, "dealias": False},
    "model": {"species": 2, "L": 1.0, "C": "identity", "kind": "nonlocal", "eps": 0.1,
              "support": (0.25, 0.75), "gradient_coefficient": 1.0, "min_annulus_cells": 3.0},
    "scheme": {"tau": None, "outer_tol": 1e-9, "outer_max": 200, "s2_tol": 1e-11, "s2_max": 500,
               "s2_damping": 0.7, "cg_tol": 1e-10, "cg_max": 2000, "method": "newton",
               "s2_method": "newton", "outer_damping": 1.0, "retry": True},
    "initial": {"preset": "perturbed_uniform", "seed": 0, "amplitude": 0.1, "max_mode": 4,
                "fractions": None, "alpha": 1.0, "width": 0.05},
    "run": {"t_final": 0.0, "max_steps": None},
    "output": {"directory": "out", "snapshot_every": 0, "strict": True, "threads": 1},
}

# preset -> option keys of [initial] it consumes
_PRESET_OPTIONS = {
    "uniform": ("fractions",),
    "perturbed_uniform": ("amplitude", "seed", "max_mode", "fractions"),
    "dirichlet_random": ("alpha", "seed", "max_mode"),
    "tanh_interface": ("width",),
}

_WORD = re.compile(r"^[A-Za-z_./~][A-Za-z0-9_\-./~]*$")


@dataclass(frozen=True)
class RunConfig:
    grid: dict
    model: dict
    scheme: dict
    initial: dict
    run: dict
    output: dict
    warnings: tuple = ()

    def with_values(self, section: str, **values) -> "RunConfig":
        """Copy with some keys of one section replaced (no re-validation of the text)."""
        updated = dict(getattr(self, section))
        for key in values:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
        updated.update(values)
        return replace(self, **{section: updated})

    def as_dict(self) -> dict:
        return asdict(self)


def _parse_value(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        if _WORD.match(text):
            return text
        raise


def parse_config(text: str) -> RunConfig:
    """Parse and fully validate a configuration text."""
    values = {s: {} for s in _SCHEMA}
    where = {}
    seen_sections = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {line!r}", lineno)
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno)
            if section in seen_sections:
                raise ConfigError(f"section [{section}] repeated (first at line {seen_sections[section]})", lineno)
            seen_sections[section] = lineno
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        if section is None:
            raise ConfigError("assignment before any [section]", lineno)
        key, _, value = (p.strip() for p in line.partition("="))
        if key not in _SCHEMA[section]:
            raise ConfigError(f"unknown key {section}.{key}", lineno)
        if (section, key) in where:
            raise ConfigError(f"duplicate key {section}.{key} at lines {where[section, key]} and {lineno}", lineno)
        try:
            values[section][key] = _parse_value(value)
        except (ValueError, SyntaxError):
            raise ConfigError(f"cannot parse value {value!r} for {section}.{key}", lineno) from None
        where[section, key] = lineno

    merged = {s: {**_SCHEMA[s], **values[s]} for s in _SCHEMA}
    cfg = RunConfig(**merged)
    return _validated(cfg, where)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _strip_comment(line: str) -> str:
    # '#' starts a comment unless inside quotes
    quote = None
    for i, ch in enumerate(line):
        if ch in "'\"":
            quote = None if quote == ch else (ch if quote is None else quote)
        elif ch == "#" and quote is None:
            return line[:i]
    return line


def _validated(cfg: RunConfig, where: dict | None = None) -> RunConfig:
    """Build every component once so invariant violations surface before any compute."""
    where = where or {}

    def fail(section, key, exc):
        raise ConfigError(str(exc), where.get((section, key))) from None

    try:
        grid = build_grid(cfg)
    except (ValueError, TypeError) as exc:
        fail("grid", _guess_key(str(exc), "grid", "d"), exc)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", InteractionWarning)
        try:
            params = build_model(cfg)
        except (ValueError, TypeError) as exc:
            fail("model", _guess_key(str(exc), "model", "kind"), exc)
    notes = tuple(str(w.message) for w in caught if issubclass(w.category, InteractionWarning))
    try:
        build_scheme(cfg)
    except (ValueError, TypeError) as exc:
        fail("scheme", _guess_key(str(exc), "scheme", "tau"), exc)
    if cfg.scheme["tau"] is None:
        raise ConfigError("scheme.tau is required")
    try:
        build_operator_for(cfg, params, grid)
    except ValueError as exc:
        fail("model", "eps", exc)

    init = cfg.initial
    if init["preset"] not in PRESETS:
        fail("initial", "preset", ValueError(f"unknown preset {init['preset']!r}"))
    try:
        initial_state(cfg, grid)
    except (ValueError, TypeError) as exc:
        fail("initial", _guess_key(str(exc), "initial", "preset"), exc)

    run = cfg.run
    if not (isinstance(run["t_final"], (int, float)) and run["t_final"] >= 0):
        fail("run", "t_final", ValueError("t_final must be a nonnegative number"))
    out = cfg.output
    if not (isinstance(out["snapshot_every"], int) and out["snapshot_every"] >= 0):
        fail("output", "snapshot_every", ValueError("snapshot_every must be a nonnegative integer"))
    if not (isinstance(out["threads"], int) and out["threads"] >= 1):
        fail("output", "threads", ValueError("threads must be a positive integer"))
    return replace(cfg, warnings=notes)


def _guess_key(message: str, section: str, default: str) -> str:
    """The key of ``section`` named in an error message, for line reporting."""
    for key in _SCHEMA[section]:
        if re.search(rf"\b{key}\b", message):
            return key
    return default


def thread_count(cfg: RunConfig) -> int:
    env = os.environ.get("NLCH_THREADS")
    threads = int(env) if env else int(cfg.output["threads"])
    return 1 if cfg.output["strict"] else max(1, threads)


def build_grid(cfg: RunConfig) -> TorusGrid:
    g = cfg.grid
    return TorusGrid(d=int(g["d"]), n_points=int(g["points"]), extent=float(g["extent"]),
                     dealias=bool(g["dealias"]), workers=thread_count(cfg))


def _matrix(value, species, name):
    if isinstance(value, str):
        if value != "identity":
            raise ValueError(f"{name} must be a matrix, a number or 'identity'")
        return np.eye(species)
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        full = np.full((species, species), float(arr))
        np.fill_diagonal(full, 0.0 if name == "L" else float(arr))
        return full
    if arr.shape != (species, species):
        raise ValueError(f"{name} must be {species}x{species}, got shape {arr.shape}")
    return arr


def build_model(cfg: RunConfig) -> ModelParams:
    m = cfg.model
    species = int(m["species"])
    if species < 2:
        raise ValueError("species must be at least 2")
    return ModelParams(L=_matrix(m["L"], species, "L"), C=_matrix(m["C"], species, "C"),
                       kind=m["kind"], eps=None if m["kind"] == "local" else float(m["eps"]),
                       support=tuple(float(x) for x in m["support"]),
                       gradient_coefficient=float(m["gradient_coefficient"]))


def build_scheme(cfg: RunConfig) -> SchemeParams:
    s = dict(cfg.scheme)
    if s["tau"] is None:
        raise ValueError("scheme.tau is required")
    return SchemeParams(**s)


def build_operator_for(cfg: RunConfig, params: ModelParams | None = None, grid: TorusGrid | None = None):
    params = params or build_model(cfg)
    grid = grid or build_grid(cfg)
    return interaction_operator(params, grid, min_annulus_cells=float(cfg.model["min_annulus_cells"]))


def initial_state(cfg: RunConfig, grid: TorusGrid | None = None) -> State:
    grid = grid or build_grid(cfg)
    init = cfg.initial
    name = init["preset"]
    options = {k: init[k] for k in _PRESET_OPTIONS.get(name, ())}
    return make_initial(name, grid, int(cfg.model["species"]), **options)
