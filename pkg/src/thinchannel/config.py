"""Experiment configuration: an INI-style file with one experiment per file.

Example::

    [experiment]
    name = tau-sweep

    [profile]
    family = gamma-power
    coefficients = 0.3, 0, 0.2

    [sweep]
    epsilon_grid = 0.5, 0.35, 0.25, 0.18, 0.125
"""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigError
from .geometry import FAMILIES, ChannelProfile, kappa_from_delta

EXPERIMENTS = (
    "tau-sweep", "dumbbell-sweep", "dirichlet-example", "bounds-check",
    "robin-limit", "mesh-convergence", "bracketing-check", "scaling-check",
)

DEFAULT_EPSILONS = {
    "dumbbell-sweep": (0.5, 0.25, 0.125),
    "dirichlet-example": (1 / 4, 1 / 8, 1 / 16, 1 / 32),
    "mesh-convergence": (1.0,),
    "bracketing-check": (0.25,),
    "scaling-check": (0.25,),
}
DEFAULT_EPSILON_GRID = (0.5, 0.35, 0.25, 0.18, 0.125)

# (section, key) -> (default, kind, help)
SCHEMA = {
    ("experiment", "name"): (None, "experiment", "one of: " + ", ".join(EXPERIMENTS)),
    ("experiment", "output_path"): ("results", "str", "output directory"),
    ("profile", "family"): ("gamma-power", "family", "gamma-power (g = gamma^(1/eps)) or direct (g = gamma)"),
    ("profile", "coefficients"): ((0.3, 0.0, 0.2), "floats", "gamma(s) = sum c_k (center - s)^k"),
    ("profile", "center"): (None, "float?", "expansion point; default L"),
    ("profile", "length"): (1.0, "pos", "channel length L"),
    ("profile", "dimension"): (2, "dim", "space dimension N (numerics need N = 2)"),
    ("sweep", "epsilon_grid"): (None, "eps", "epsilon values; default depends on experiment"),
    ("sweep", "eta_grid"): ((1e-1, 1e-2, 1e-3), "posfloats", "Robin coefficients (robin-limit)"),
    ("sweep", "rho_grid"): ((2.0, 10.0), "posfloats", "dilation factors (scaling-check)"),
    ("mesh", "nx"): (64, "mesh", "channel cells along the axis for tau"),
    ("mesh", "ny"): (64, "mesh", "channel cells across for tau"),
    ("mesh", "h_base"): (1 / 64, "pos", "base rectangle element size (dumbbell)"),
    ("mesh", "channel_nx"): (64, "mesh", "dumbbell channel cells along the axis"),
    ("mesh", "channel_ny"): (16, "mesh", "dumbbell channel cells across"),
    ("mesh", "osc_nx"): (256, "mesh", "oscillating domain cells in x"),
    ("mesh", "osc_ny"): (128, "mesh", "oscillating domain cells in y"),
    ("mesh", "levels"): (3, "levels", "refinement levels (mesh-convergence)"),
    ("solver", "k"): (6, "k", "number of eigenpairs"),
    ("solver", "tol"): (1e-8, "pos", "relative residual tolerance"),
    ("solver", "max_iter"): (500, "count", "iteration limit"),
    ("solver", "seed"): (0, "int", "seed for the random initial block"),
    ("solver", "preconditioner"): ("factorized", "precond", "factorized or jacobi"),
    ("bounds", "kappa"): (None, "kappa", "bound parameter; default from delta"),
    ("bounds", "delta"): (0.1, "pos", "kappa = (N-1)/2 - (N-1-delta) + 1"),
    ("domain", "base_height"): (0.83, "pos", "height h of the base rectangle"),
    ("domain", "amplitude"): (0.3, "nonneg", "oscillation amplitude a (dirichlet-example)"),
}


@dataclass(frozen=True)
class ProfileSpec:
    family: str = "gamma-power"
    coefficients: tuple = (0.3, 0.0, 0.2)
    center: Optional[float] = None
    length: float = 1.0
    dimension: int = 2

    def at(self, epsilon):
        return ChannelProfile(self.coefficients, epsilon=epsilon, length=self.length,
                              dimension=self.dimension, family=self.family,
                              center=self.center)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    profile: ProfileSpec = field(default_factory=ProfileSpec)
    epsilon_grid: tuple = DEFAULT_EPSILON_GRID
    eta_grid: tuple = (1e-1, 1e-2, 1e-3)
    rho_grid: tuple = (2.0, 10.0)
    nx: int = 64
    ny: int = 64
    h_base: float = 1 / 64
    channel_nx: int = 64
    channel_ny: int = 16
    osc_nx: int = 256
    osc_ny: int = 128
    levels: int = 3
    k: int = 6
    tol: float = 1e-8
    max_iter: int = 500
    seed: int = 0
    preconditioner: str = "factorized"
    kappa: float = 0.6
    delta: float = 0.1
    base_height: float = 0.83
    amplitude: float = 0.3
    output_path: str = "results"


def _split(raw):
    return [p.strip() for p in re.split(r"[,\s]+", raw.strip()) if p.strip()]


def _number(raw, path, line):
    try:
        v = float(raw)
    except ValueError:
        raise ConfigError(path, f"not a number: {raw!r}", line) from None
    if not math.isfinite(v):
        raise ConfigError(path, f"not finite: {raw!r}", line)
    return v


def _integer(raw, path, line):
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(path, f"not an integer: {raw!r}", line) from None


def _convert(kind, raw, path, line):
    if kind == "experiment":
        if raw not in EXPERIMENTS:
            raise ConfigError(path, f"unknown experiment {raw!r}", line)
        return raw
    if kind == "family":
        if raw not in FAMILIES:
            raise ConfigError(path, f"unknown family {raw!r}", line)
        return raw
    if kind == "precond":
        if raw not in ("factorized", "jacobi"):
            raise ConfigError(path, f"unknown preconditioner {raw!r}", line)
        return raw
    if kind == "str":
        return raw
    if kind in ("floats", "posfloats", "eps"):
        items = _split(raw)
        if not items:
            raise ConfigError(path, "empty list", line)
        values = tuple(_number(v, f"{path}[{i}]", line) for i, v in enumerate(items))
        if kind in ("posfloats", "eps"):
            for i, v in enumerate(values):
                if not v > 0:
                    raise ConfigError(f"{path}[{i}]", f"must be > 0, got {v:g}", line)
        if kind == "eps":
            seen = {}
            for i, v in enumerate(values):
                if v in seen:
                    raise ConfigError(f"{path}[{i}]", f"duplicate of {path}[{seen[v]}]", line)
                seen[v] = i
        return values
    if kind in ("float?", "kappa"):
        if raw == "":
            return None
        v = _number(raw, path, line)
        if kind == "kappa" and not v < 1:
            raise ConfigError(path, f"kappa must be < 1, got {v:g}", line)
        return v
    if kind in ("pos", "nonneg"):
        v = _number(raw, path, line)
        if kind == "pos" and not v > 0:
            raise ConfigError(path, f"must be > 0, got {v:g}", line)
        if kind == "nonneg" and v < 0:
            raise ConfigError(path, f"must be >= 0, got {v:g}", line)
        return v
    v = _integer(raw, path, line)
    minimum = {"mesh": 4, "k": 1, "count": 1, "dim": 2, "levels": 2, "int": None}[kind]
    if minimum is not None and v < minimum:
        raise ConfigError(path, f"must be >= {minimum}, got {v}", line)
    return v


def _line_numbers(text):
    """Map ``(section, key)`` to its 1-based line number."""
    out, section = {}, None
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip().lower()
            out[(section, None)] = no
            continue
        m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", s)
        if m and section is not None:
            out[(section, m.group(1).strip().lower())] = no
    return out


def parse_config(text):
    """Strictly parse config text; unknown sections or keys are rejected."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError("<config>", str(exc).splitlines()[0], line) from None
    lines = _line_numbers(text)
    known_sections = {s for s, _ in SCHEMA}
    values = {}
    for section in parser.sections():
        if section not in known_sections:
            raise ConfigError(section, "unknown section", lines.get((section, None)))
        for key, raw in parser.items(section):
            path = f"{section}.{key}"
            line = lines.get((section, key))
            if (section, key) not in SCHEMA:
                raise ConfigError(path, "unknown key", line)
            _, kind, _ = SCHEMA[(section, key)]
            values[(section, key)] = _convert(kind, raw.strip(), path, line)
    if ("experiment", "name") not in values:
        raise ConfigError("experiment.name", "missing required key",
                          lines.get(("experiment", None)))

    def get(section, key):
        if (section, key) in values:
            return values[(section, key)]
        return SCHEMA[(section, key)][0]

    name = get("experiment", "name")
    profile = ProfileSpec(
        family=get("profile", "family"),
        coefficients=tuple(get("profile", "coefficients")),
        center=get("profile", "center"),
        length=get("profile", "length"),
        dimension=get("profile", "dimension"),
    )
    eps = get("sweep", "epsilon_grid")
    if eps is None:
        eps = DEFAULT_EPSILONS.get(name, DEFAULT_EPSILON_GRID)
    delta = get("bounds", "delta")
    kappa = get("bounds", "kappa")
    if kappa is None:
        kappa = kappa_from_delta(profile.dimension, delta)
        if not kappa < 1:
            raise ConfigError("bounds.delta", f"gives kappa = {kappa:g} >= 1",
                              lines.get(("bounds", "delta")))
    return ExperimentConfig(
        experiment=name,
        profile=profile,
        epsilon_grid=tuple(eps),
        eta_grid=tuple(get("sweep", "eta_grid")),
        rho_grid=tuple(get("sweep", "rho_grid")),
        nx=get("mesh", "nx"),
        ny=get("mesh", "ny"),
        h_base=get("mesh", "h_base"),
        channel_nx=get("mesh", "channel_nx"),
        channel_ny=get("mesh", "channel_ny"),
        osc_nx=get("mesh", "osc_nx"),
        osc_ny=get("mesh", "osc_ny"),
        levels=get("mesh", "levels"),
        k=get("solver", "k"),
        tol=get("solver", "tol"),
        max_iter=get("solver", "max_iter"),
        seed=get("solver", "seed"),
        preconditioner=get("solver", "preconditioner"),
        kappa=kappa,
        delta=delta,
        base_height=get("domain", "base_height"),
        amplitude=get("domain", "amplitude"),
        output_path=get("experiment", "output_path"),
    )


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def describe_defaults():
    """Text table of every key and its default, for ``--help``."""
    rows = []
    for (section, key), (default, _, text) in SCHEMA.items():
        if isinstance(default, tuple):
            shown = ", ".join(f"{v:g}" for v in default)
        elif default is None:
            shown = "-"
        elif isinstance(default, float):
            shown = f"{default:g}"
        else:
            shown = str(default)
        rows.append(f"  [{section}] {key} = {shown}    {text}")
    return "\n".join(rows)
