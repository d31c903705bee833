"""Run configuration: INI files with a fixed schema and strict key checking.

Every section and key below is recognised; anything else is rejected. Values
``auto`` are resolved at run time (softening from the spatial spacing, energy
grid spacing from the radius, exponents from interval midpoints) and the
resolved values are echoed into every report.

Example::

    [physics]
    lam = 0.5
    c0 = 0.05
    epsilon = 0.8

    [sampling]
    r_max = 4
    h_x = 2
    h_v = 1

    [run]
    cutoffs = 3, 4, 5, 6, 7, 8
    t_final = 0.5
    dt = 0.015625
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .coulomb_field import FieldMethod, Softening
from .phase_space import PhysParams, PowerLaw, SamplingSpec, SparsePlateaus

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "dump_config",
           "SCHEMA"]


class ConfigError(ValueError):
    """Malformed or invalid configuration."""


def _floats(s: str) -> tuple:
    s = s.strip()
    return tuple(float(x) for x in s.split(",") if x.strip()) if s else ()


def _ints(s: str) -> tuple:
    s = s.strip()
    return tuple(int(x) for x in s.split(",") if x.strip()) if s else ()


def _auto_float(s: str):
    s = s.strip()
    return "auto" if s == "auto" else float(s)


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _str(s: str) -> str:
    return s.strip()


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


# section -> key -> (attribute, parser, default)
SCHEMA = {
    "profile": {
        "kind": ("profile_kind", _str, "PowerLaw"),
        "c": ("profile_c", float, 1.0),
        "centers": ("plateau_centers", _floats, ()),
        "radii": ("plateau_radii", _floats, ()),
        "heights": ("plateau_heights", _floats, ()),
        "core": ("plateau_core", float, 1.0),
    },
    "physics": {
        "lam": ("lam", float, 0.5),
        "c0": ("c0", float, 0.05),
        "epsilon": ("epsilon", float, 0.8),
        "c1": ("c1", float, 1.0),
    },
    "sampling": {
        "r_max": ("r_max", float, 4.0),
        "h_x": ("h_x", float, 2.0),
        "h_v": ("h_v", float, 1.0),
        "seed": ("seed", int, 0),
        "weight_floor": ("weight_floor", float, 1e-16),
    },
    "run": {
        "cutoffs": ("cutoffs", _ints, (3, 4, 5, 6, 7, 8)),
        "t_final": ("t_final", float, 0.5),
        "dt": ("dt", float, 0.015625),
        "max_disp_frac": ("max_disp_frac", float, 0.25),
        "snapshot_stride": ("snapshot_stride", int, 8),
        "integrator": ("integrator", _str, "verlet"),
        "c_tilde": ("c_tilde", float, 2.0),
        "tracked": ("tracked", int, 192),
    },
    "field": {
        "method": ("method", _str, "tree"),
        "theta": ("theta", float, 0.3),
        "leaf_size": ("leaf_size", int, 8),
        "order": ("order", int, 2),
        "softening": ("softening", _auto_float, "auto"),
    },
    "diagnostics": {
        "energy": ("energy", _bool, True),
        "energy_spacing": ("energy_spacing", _auto_float, "auto"),
        "h_rho": ("h_rho", _auto_float, "auto"),
        "probe_pairs": ("probe_pairs", int, 64),
        "calibration_cutoffs": ("calibration_cutoffs", _ints, (3, 4)),
        "separation_windows": ("separation_windows", int, 4),
    },
    "params": {
        "gamma": ("gamma", _auto_float, "auto"),
        "eta": ("eta", _auto_float, "auto"),
        "delta": ("delta", _auto_float, "auto"),
        "alpha": ("alpha", _auto_float, "auto"),
    },
    "output": {
        "dir": ("out_dir", _str, "runs"),
        "threads": ("threads", int, 1),
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration (see :data:`SCHEMA` for sections and keys)."""

    profile_kind: str = "PowerLaw"
    profile_c: float = 1.0
    plateau_centers: tuple = ()
    plateau_radii: tuple = ()
    plateau_heights: tuple = ()
    plateau_core: float = 1.0
    lam: float = 0.5
    c0: float = 0.05
    epsilon: float = 0.8
    c1: float = 1.0
    r_max: float = 4.0
    h_x: float = 2.0
    h_v: float = 1.0
    seed: int = 0
    weight_floor: float = 1e-16
    cutoffs: tuple = (3, 4, 5, 6, 7, 8)
    t_final: float = 0.5
    dt: float = 0.015625
    max_disp_frac: float = 0.25
    snapshot_stride: int = 8
    integrator: str = "verlet"
    c_tilde: float = 2.0
    tracked: int = 192
    method: str = "tree"
    theta: float = 0.3
    leaf_size: int = 8
    order: int = 2
    softening: object = "auto"
    energy: bool = True
    energy_spacing: object = "auto"
    h_rho: object = "auto"
    probe_pairs: int = 64
    calibration_cutoffs: tuple = (3, 4)
    separation_windows: int = 4
    gamma: object = "auto"
    eta: object = "auto"
    delta: object = "auto"
    alpha: object = "auto"
    out_dir: str = "runs"
    threads: int = 1

    def __post_init__(self):
        self.validate()

    # -- derived objects
    @property
    def params(self) -> PhysParams:
        return PhysParams(lam=self.lam, c0=self.c0, epsilon=self.epsilon, c1=self.c1)

    @property
    def profile(self):
        if self.profile_kind == "PowerLaw":
            return PowerLaw(self.profile_c, self.epsilon)
        return SparsePlateaus(self.profile_c, self.epsilon, self.plateau_centers,
                              self.plateau_radii, self.plateau_heights, self.plateau_core)

    @property
    def sampling(self) -> SamplingSpec:
        return SamplingSpec(self.r_max, self.h_x, self.h_v, self.seed, self.weight_floor)

    @property
    def field_method(self) -> FieldMethod:
        if self.method == "tree":
            return FieldMethod("tree", self.theta, self.order, self.leaf_size)
        return FieldMethod.direct()

    @property
    def soft(self) -> Softening:
        if self.softening == "auto":
            return Softening.from_spacing(self.h_x)
        return Softening(float(self.softening))

    @property
    def resolved_h_rho(self) -> float:
        return self.h_x if self.h_rho == "auto" else float(self.h_rho)

    def validate(self) -> None:
        try:
            self.params
            self.profile
            self.sampling.velocity_resolution
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.profile_kind not in ("PowerLaw", "SparsePlateaus"):
            raise ConfigError(f"unknown profile kind {self.profile_kind!r}")
        if self.method not in ("direct", "tree"):
            raise ConfigError(f"unknown field method {self.method!r}")
        if self.integrator not in ("verlet", "rk4"):
            raise ConfigError(f"unknown integrator {self.integrator!r}")
        if not self.cutoffs or min(self.cutoffs) < 1:
            raise ConfigError("cutoffs must be a nonempty list of integers >= 1")
        if not (self.t_final > 0 and self.dt > 0):
            raise ConfigError("t_final and dt must be positive")
        if self.order not in (1, 2):
            raise ConfigError("order must be 1 (monopole) or 2 (quadrupole)")
        if self.softening != "auto" and float(self.softening) < 0:
            raise ConfigError("softening must be nonnegative")
        if self.threads < 1 or self.snapshot_stride < 1 or self.tracked < 0:
            raise ConfigError("threads and snapshot_stride must be >= 1, tracked >= 0")

    def hash(self) -> str:
        """Stable digest of the configuration (output directory and threads excluded)."""
        d = {f.name: getattr(self, f.name) for f in fields(self)
             if f.name not in ("out_dir", "threads")}
        blob = json.dumps(d, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v, tuple) else v)
                for f in fields(self) for v in [getattr(self, f.name)]}

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        try:
            return replace(self, **kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def parse_config(text: str) -> RunConfig:
    """Parse INI text into a :class:`RunConfig`, rejecting unknown sections and keys."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    kw = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key, raw in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            attr, parse, _ = SCHEMA[sec][key]
            try:
                kw[attr] = parse(raw)
            except ValueError as exc:
                raise ConfigError(f"[{sec}] {key}: {exc}") from exc
    return RunConfig(**kw)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def dump_config(cfg: RunConfig) -> str:
    """Serialise every key (``parse_config(dump_config(c)) == c``)."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for sec, keys in SCHEMA.items():
        cp[sec] = {key: _fmt(getattr(cfg, attr)) for key, (attr, _, _) in keys.items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
