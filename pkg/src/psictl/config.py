"""Flat key = value run configuration.

One file describes one job: the control problem plus the numerical
settings each solver needs. Lines are ``key = value``; ``#`` starts a
comment; blank lines are ignored. Values are scalars, whitespace
separated vectors, ``;``-separated matrix rows, or polynomial
expressions in ``x1 .. xN`` for the drift. There are no implicit
defaults: a key is either set, supplied by the named ``preset``, or an
error when a command needs it.

The one shipped preset, ``vdp``, is the noisy van der Pol regulation
study: keep the oscillator pinned near (1, 0) by actuating only the
velocity coordinate, with model noise matched to control authority
(lambda = 0.25) and a plant that carries extra position noise the
model ignores.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import ParseError, ValidationError
from .problem import ControlProblem, QuadraticCost

_PRESETS = {
    "vdp": {
        "dim": "2",
        "drift_1": "x2",
        "drift_2": "x2 - x1^2*x2 - x1",
        "diffusion": "0 0; 0 1",
        "plant_diffusion": "0.1 0; 0 1",
        "control_map": "0 0; 0 1",
        "control_weight": "0 0; 0 0.25",
        "terminal_centers": "1 0",
        "terminal_widths": "0.5 0.5",
        "running_centers": "1 0",
        "running_widths": "0.5 0.5",
        "t_start": "0",
        "t_end": "0.1",
        "cutoff": "60",
        "nz_levels": "2",
        "ode_dt": "1e-4",
        "grid_lower": "-2 -2",
        "grid_upper": "2 2",
        "grid_spacing": "0.01",
        "pde_dt": "1e-4",
        "cfl_safety": "1.0",
        "n_paths": "100000",
        "mc_dt": "1e-4",
        "probes": "0 0; 0.5 0; 1 0; -0.5 0.5; 0.5 -0.5; 1 1; -1 -0.5; 0 1; -0.5 -1; 0.25 0.75",
        "seed": "0",
        "clamp_lower": "-1.5 -1.5",
        "clamp_upper": "1.5 1.5",
        "duration": "10",
        "sim_dt": "1e-4",
        "x0": "0 0",
        "stride": "100",
        "controller": "koopman",
        "psi_floor": "1e-12",
    }
}

_INT_KEYS = {"dim", "cutoff", "nz_levels", "n_paths", "seed", "stride"}
_FLOAT_KEYS = {
    "t_start", "t_end", "lambda", "ode_dt", "pde_dt", "cfl_safety",
    "mc_dt", "duration", "sim_dt", "psi_floor",
}
_VECTOR_KEYS = {
    "terminal_centers", "terminal_widths", "running_centers", "running_widths",
    "grid_lower", "grid_upper", "grid_spacing",
    "clamp_lower", "clamp_upper", "x0",
}
_MATRIX_KEYS = {"diffusion", "plant_diffusion", "control_map", "control_weight", "probes"}
_ENUM_KEYS = {"controller": ("koopman", "hjb", "zero"), "preset": tuple(_PRESETS)}

_KEY_ORDER = [
    "preset", "dim",
    # drift_1 .. drift_N slot in here
    "diffusion", "plant_diffusion", "control_map", "control_weight", "lambda",
    "terminal_centers", "terminal_widths", "running_centers", "running_widths",
    "t_start", "t_end",
    "cutoff", "nz_levels", "ode_dt",
    "grid_lower", "grid_upper", "grid_spacing", "pde_dt", "cfl_safety",
    "n_paths", "mc_dt", "probes",
    "seed",
    "clamp_lower", "clamp_upper", "duration", "sim_dt", "x0", "stride",
    "controller", "psi_floor",
]


def _known_key(key):
    return (
        key in _INT_KEYS or key in _FLOAT_KEYS or key in _VECTOR_KEYS
        or key in _MATRIX_KEYS or key in _ENUM_KEYS
        or (key.startswith("drift_") and key[6:].isdigit())
    )


def parse_config_text(text):
    """Parse config text into an ordered {key: raw string} dict.

    The ``preset`` key (if any) is expanded first; explicit keys
    override preset values wherever they appear in the file.
    """
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {line!r}", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not _known_key(key):
            raise ParseError(f"unknown key {key!r}", line=lineno)
        if key in entries:
            raise ParseError(f"duplicate key {key!r}", line=lineno)
        if not value:
            raise ParseError(f"empty value for {key!r}", line=lineno)
        if key in _ENUM_KEYS and value not in _ENUM_KEYS[key]:
            raise ParseError(
                f"{key} must be one of {', '.join(_ENUM_KEYS[key])}", line=lineno
            )
        entries[key] = value
    resolved = {}
    if "preset" in entries:
        resolved.update(_PRESETS[entries["preset"]])
    resolved.update({k: v for k, v in entries.items() if k != "preset"})
    if "preset" in entries:
        resolved["preset"] = entries["preset"]
    return resolved


def _parse_float(key, text):
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"{key} must be a number, got {text!r}") from None


def _parse_int(key, text):
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"{key} must be an integer, got {text!r}") from None


def _parse_vector(key, text):
    try:
        return np.array([float(tok) for tok in text.split()])
    except ValueError:
        raise ParseError(f"{key} must be a list of numbers, got {text!r}") from None


def _parse_matrix(key, text):
    rows = [r.strip() for r in text.split(";")]
    try:
        data = [[float(tok) for tok in r.split()] for r in rows if r]
    except ValueError:
        raise ParseError(f"{key} must be ';'-separated numeric rows") from None
    if not data or len({len(r) for r in data}) != 1:
        raise ParseError(f"{key} rows must be nonempty and congruent")
    return np.array(data)


@dataclass
class RunConfig:
    """A parsed, validated job description.

    ``problem`` is always present; the numerical settings are None when
    the config did not provide them, and `require` turns a missing one
    into a clear error at the point of use.
    """

    problem: ControlProblem
    raw: dict = field(repr=False)
    cutoff: Optional[int] = None
    nz_levels: Optional[int] = None
    ode_dt: Optional[float] = None
    grid_lower: Optional[np.ndarray] = None
    grid_upper: Optional[np.ndarray] = None
    grid_spacing: Optional[np.ndarray] = None
    pde_dt: Optional[float] = None
    cfl_safety: Optional[float] = None
    n_paths: Optional[int] = None
    mc_dt: Optional[float] = None
    probes: Optional[np.ndarray] = None
    seed: Optional[int] = None
    clamp_lower: Optional[np.ndarray] = None
    clamp_upper: Optional[np.ndarray] = None
    duration: Optional[float] = None
    sim_dt: Optional[float] = None
    x0: Optional[np.ndarray] = None
    stride: Optional[int] = None
    controller: Optional[str] = None
    psi_floor: Optional[float] = None

    def require(self, name):
        value = getattr(self, name)
        if value is None:
            key = "lambda" if name == "lam" else name
            raise ValidationError(
                f"config key '{key}' is required for this command"
            )
        return value


def build_config(entries):
    """Typed `RunConfig` from a resolved {key: raw string} dict."""
    def get(key, kind):
        if key not in entries:
            return None
        text = entries[key]
        if kind == "int":
            return _parse_int(key, text)
        if kind == "float":
            return _parse_float(key, text)
        if kind == "vector":
            return _parse_vector(key, text)
        return _parse_matrix(key, text)

    dim = get("dim", "int")
    if dim is None:
        raise ValidationError("config key 'dim' is required")
    if dim < 1:
        raise ValidationError("dim must be at least 1")
    drift = []
    for i in range(1, dim + 1):
        key = f"drift_{i}"
        if key not in entries:
            raise ValidationError(f"config key '{key}' is required")
        drift.append(entries[key])
    for key in entries:
        if key.startswith("drift_") and int(key[6:]) > dim:
            raise ValidationError(f"config key '{key}' exceeds dim = {dim}")

    def need(key, kind):
        value = get(key, kind)
        if value is None:
            raise ValidationError(f"config key '{key}' is required")
        return value

    terminal = QuadraticCost(need("terminal_centers", "vector"),
                             need("terminal_widths", "vector"))
    running = QuadraticCost(need("running_centers", "vector"),
                            need("running_widths", "vector"))
    problem = ControlProblem(
        drift=drift,
        diffusion=need("diffusion", "matrix"),
        control_map=need("control_map", "matrix"),
        control_weight=need("control_weight", "matrix"),
        terminal_cost=terminal,
        running_cost=running,
        t_start=need("t_start", "float"),
        t_end=need("t_end", "float"),
        lam=get("lambda", "float"),
        plant_diffusion=get("plant_diffusion", "matrix"),
    )

    cfg = RunConfig(
        problem=problem,
        raw=dict(entries),
        cutoff=get("cutoff", "int"),
        nz_levels=get("nz_levels", "int"),
        ode_dt=get("ode_dt", "float"),
        grid_lower=get("grid_lower", "vector"),
        grid_upper=get("grid_upper", "vector"),
        grid_spacing=get("grid_spacing", "vector"),
        pde_dt=get("pde_dt", "float"),
        cfl_safety=get("cfl_safety", "float"),
        n_paths=get("n_paths", "int"),
        mc_dt=get("mc_dt", "float"),
        probes=get("probes", "matrix"),
        seed=get("seed", "int"),
        clamp_lower=get("clamp_lower", "vector"),
        clamp_upper=get("clamp_upper", "vector"),
        duration=get("duration", "float"),
        sim_dt=get("sim_dt", "float"),
        x0=get("x0", "vector"),
        stride=get("stride", "int"),
        controller=entries.get("controller"),
        psi_floor=get("psi_floor", "float"),
    )
    return cfg


def load_config(text):
    """Parse and validate config text into a `RunConfig`."""
    return build_config(parse_config_text(text))


def load_config_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        return load_config(fh.read())


def provenance_lines(config):
    """Canonical resolved-config lines for CSV comment headers.

    Fully deterministic for a given config: keys in a fixed order with
    canonically formatted values, plus the derived lambda, so rerunning
    the same job reproduces output files byte for byte.
    """
    entries = config.raw
    dim = config.problem.dim
    lines = []

    def fmt(key):
        text = entries[key]
        if key in _INT_KEYS:
            return str(_parse_int(key, text))
        if key in _FLOAT_KEYS:
            return repr(_parse_float(key, text))
        if key in _VECTOR_KEYS:
            return " ".join(repr(float(v)) for v in _parse_vector(key, text))
        if key in _MATRIX_KEYS:
            m = _parse_matrix(key, text)
            return "; ".join(
                " ".join(repr(float(v)) for v in row) for row in m
            )
        return text

    for key in _KEY_ORDER:
        if key == "dim":
            lines.append(f"dim = {dim}")
            for i in range(1, dim + 1):
                lines.append(f"drift_{i} = {entries[f'drift_{i}']}")
            continue
        if key == "lambda":
            lines.append(f"lambda = {config.problem.lam!r}")
            continue
        if key in entries:
            lines.append(f"{key} = {fmt(key)}")
    return lines


def van_der_pol():
    """The shipped van der Pol regulation problem (preset ``vdp``)."""
    return build_config(dict(_PRESETS["vdp"])).problem


def preset_config(name="vdp"):
    """A full `RunConfig` for a named preset."""
    if name not in _PRESETS:
        raise ValidationError(f"unknown preset {name!r}")
    return build_config(dict(_PRESETS[name]))
