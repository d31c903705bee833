"""Columnar text persistence.

Every file starts with ``# <json metadata>`` (carrying ``schema`` and
``version``), followed by ``# col1 col2 ...`` naming the columns (with units in
brackets where meaningful), then one whitespace-separated record per line
written with 17 significant digits so that floats round-trip exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .phase_space import (Ensemble, PhysParams, SamplingSpec, profile_from_dict,
                          profile_to_dict)

SCHEMA_VERSION = 1
FMT = "%.17g"


def write_columns(path, columns: dict, meta: dict | None = None) -> Path:
    """Write equal-length 1-d arrays as a columnar table."""
    path = Path(path)
    names = list(columns)
    arrs = [np.asarray(columns[k]).reshape(-1) for k in names]
    if len({a.shape[0] for a in arrs}) > 1:
        raise ValueError("columns must have equal length")
    header = dict(meta or {})
    header.setdefault("version", SCHEMA_VERSION)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.column_stack([a.astype(float) for a in arrs]) if arrs else np.zeros((0, 0))
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        fh.write("# " + " ".join(names) + "\n")
        if data.size:
            np.savetxt(fh, data, fmt=FMT)
    return path


def read_columns(path) -> tuple[dict, dict]:
    """Inverse of :func:`write_columns`; returns ``(meta, columns)``."""
    with open(path) as fh:
        meta = json.loads(fh.readline()[1:].strip())
        names = fh.readline()[1:].split()
        data = np.loadtxt(fh, ndmin=2)
    if data.size == 0:
        data = np.zeros((0, len(names)))
    return meta, {k: data[:, i] for i, k in enumerate(names)}


def save_ensemble(ens: Ensemble, path) -> Path:
    meta = {
        "schema": "ensemble",
        "cutoff_n": ens.cutoff_n,
        "params": {"lam": ens.params.lam, "c0": ens.params.c0,
                   "epsilon": ens.params.epsilon, "c1": ens.params.c1},
        "profile": profile_to_dict(ens.profile),
        "sampling": None if ens.sampling is None else {
            "r_max": ens.sampling.r_max, "h_x": ens.sampling.h_x, "h_v": ens.sampling.h_v,
            "seed": ens.sampling.seed, "weight_floor": ens.sampling.weight_floor},
        "f_inf": ens.f_inf,
    }
    cols = {"x": ens.pos[:, 0], "y": ens.pos[:, 1], "z": ens.pos[:, 2],
            "vx": ens.vel[:, 0], "vy": ens.vel[:, 1], "vz": ens.vel[:, 2],
            "weight": ens.weight, "shell": ens.shell}
    return write_columns(path, cols, meta)


def load_ensemble(path) -> Ensemble:
    meta, c = read_columns(path)
    if meta.get("schema") != "ensemble":
        raise ValueError(f"{path} is not an ensemble file")
    samp = meta["sampling"]
    return Ensemble(
        pos=np.column_stack([c["x"], c["y"], c["z"]]),
        vel=np.column_stack([c["vx"], c["vy"], c["vz"]]),
        weight=c["weight"].copy(),
        shell=c["shell"].astype(np.int64),
        cutoff_n=int(meta["cutoff_n"]),
        params=PhysParams(**meta["params"]),
        profile=profile_from_dict(meta["profile"]),
        sampling=None if samp is None else SamplingSpec(**samp),
        f_inf=float(meta["f_inf"]),
    )
