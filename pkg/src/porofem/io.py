"""Run configuration, CSV tables and VTK XML export."""

from __future__ import annotations

import csv
import json
import math
import struct
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .constitutive import MaterialParams, ParameterError
from .experiments import practical_params, strain_sample_points
from .fem.dofs import DofMap
from .fem.fields import evaluate, strain_from_grad
from .manufactured import ErrorReport, manufactured_params
from .mesh import Mesh
from .solver import SystemState

PROBLEMS = ("manufactured", "practical")
THETAS = ("exp", "sin")
VISCOUS_FORMS = ("grad_grad", "sym_grad")
PARAM_KEYS = {f.name for f in fields(MaterialParams)} - {"d"}


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass
class RunConfig:
    problem: str = "manufactured"
    theta: str = "exp"
    m: int | None = None
    nx: int | None = None
    ny: int | None = None
    N: int = 10
    dt: float | None = None
    T: float = 1.0
    rows: list = field(default_factory=list)
    coupled_levels: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)
    params: MaterialParams = field(default_factory=manufactured_params)
    viscous_form: str = "grad_grad"
    output_dir: str = "output"
    vtu_every: int = 0
    deterministic: bool = False
    backend: str | None = None


# key -> (accepted types, validator or None)
def _positive(v):
    return v > 0


def _nonnegative(v):
    return v >= 0


_SCHEMA = {
    "problem": (str, lambda v: v in PROBLEMS),
    "theta": (str, lambda v: v in THETAS),
    "m": (int, _positive),
    "nx": (int, _positive),
    "ny": (int, _positive),
    "N": (int, _positive),
    "dt": ((int, float), _positive),
    "T": ((int, float), _positive),
    "rows": (list, None),
    "coupled_levels": (list, None),
    "lambdas": (list, None),
    "lambda": ((int, float), None),
    "params": (dict, None),
    "viscous_form": (str, lambda v: v in VISCOUS_FORMS),
    "output_dir": (str, None),
    "vtu_every": (int, _nonnegative),
    "deterministic": (bool, None),
    "backend": ((str, type(None)), lambda v: v in (None, "pardiso", "superlu")),
}


def _check_type(path, value, types):
    # bool is an int subclass; reject it where a number is expected
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ConfigError(path, f"expected {types}, got bool")
    if not isinstance(value, types):
        raise ConfigError(path, f"expected {getattr(types, '__name__', types)}, got {type(value).__name__}")


def parse_config(text: str | dict) -> RunConfig:
    """Validate a JSON configuration document and fill in problem defaults."""
    if isinstance(text, dict):
        raw = text
    else:
        try:
            raw = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("", "top level must be an object")
    for key, value in raw.items():
        if key not in _SCHEMA:
            raise ConfigError(key, "unknown key")
        types, ok = _SCHEMA[key]
        _check_type(key, value, types)
        if ok is not None and not ok(value):
            raise ConfigError(key, f"invalid value {value!r}")

    problem = raw.get("problem", "manufactured")
    cfg = RunConfig(problem=problem)
    if problem == "practical":
        cfg.nx, cfg.ny, cfg.dt, cfg.N = 128, 64, 0.1, 10
        cfg.viscous_form = "sym_grad"
        cfg.lambdas = [0, 1, 2, 3, 4, 5]
        base = practical_params()
    else:
        cfg.m = 4
        base = manufactured_params()

    param_values = {f.name: getattr(base, f.name) for f in fields(MaterialParams)}
    if "lambda" in raw:
        param_values["lambda1"] = param_values["lambda2"] = float(raw["lambda"])
        cfg.lambdas = [float(raw["lambda"])]
    for key, value in raw.get("params", {}).items():
        path = f"params.{key}"
        if key == "lambda":
            _check_type(path, value, (int, float))
            param_values["lambda1"] = param_values["lambda2"] = float(value)
            continue
        if key not in PARAM_KEYS:
            raise ConfigError(path, "unknown key")
        _check_type(path, value, (int, float))
        param_values[key] = float(value)
    try:
        cfg.params = MaterialParams(**param_values)
    except ParameterError as exc:
        raise ConfigError("params", str(exc)) from exc

    for key in ("theta", "m", "nx", "ny", "N", "T", "viscous_form", "output_dir",
                "vtu_every", "deterministic", "backend"):
        if key in raw:
            setattr(cfg, key, raw[key])
    # N, T and dt: any two determine the third and all three must agree.
    # The practical problem is specified by its step size, the manufactured
    # one by its step count.
    if "dt" in raw:
        cfg.dt = float(raw["dt"])
    if {"N", "T", "dt"} <= raw.keys():
        if not math.isclose(cfg.N * cfg.dt, cfg.T, rel_tol=1e-9):
            raise ConfigError("dt", f"N*dt = {cfg.N * cfg.dt} does not match T = {cfg.T}")
    elif cfg.dt is not None and "N" in raw:
        cfg.T = cfg.N * cfg.dt
    elif cfg.dt is not None:
        cfg.N = max(1, int(round(cfg.T / cfg.dt)))
    else:
        cfg.dt = cfg.T / cfg.N

    if "rows" in raw:
        cfg.rows = []
        for i, row in enumerate(raw["rows"]):
            if (not isinstance(row, list) or len(row) != 2
                    or not all(isinstance(v, int) and not isinstance(v, bool) and v > 0 for v in row)):
                raise ConfigError(f"rows[{i}]", "expected [m, N] with positive integers")
            cfg.rows.append((row[0], row[1]))
    if "coupled_levels" in raw:
        for i, v in enumerate(raw["coupled_levels"]):
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"coupled_levels[{i}]", "expected a positive integer")
        cfg.coupled_levels = list(raw["coupled_levels"])
    if "lambdas" in raw:
        for i, v in enumerate(raw["lambdas"]):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"lambdas[{i}]", "expected a number")
        cfg.lambdas = [float(v) for v in raw["lambdas"]]
    return cfg


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


ERROR_COLUMNS = ("m", "N") + ErrorReport.COLUMNS
RATE_COLUMNS = ("m_coarse", "m_fine", "err_u_h01", "err_v_h01", "err_p_l2")


def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    # shortest representation that reads back to the same double, never
    # fewer than six significant digits
    return np.format_float_scientific(float(value), unique=True, min_digits=5, exp_digits=2)


def write_csv(path, columns, rows) -> Path:
    """Write ``rows`` (mappings or sequences) under a header of ``columns``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            if isinstance(row, dict):
                row = [row.get(c) for c in columns]
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path) -> tuple[list, list]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = []
        for rec in r:
            vals = []
            for s in rec:
                if s == "":
                    vals.append(None)
                elif s.lstrip("-").isdigit():
                    vals.append(int(s))
                else:
                    vals.append(float(s))
            rows.append(vals)
    return header, rows


def write_error_table(path, report) -> Path:
    rows = []
    for r in report.rows:
        rec = {"m": r.m, "N": r.N}
        if r.errors is not None:
            rec.update(r.errors.as_dict())
        rows.append(rec)
    return write_csv(path, ERROR_COLUMNS, rows)


def write_rate_table(path, report) -> Path:
    return write_csv(path, RATE_COLUMNS, report.rates)


def strain_columns(lambdas) -> list:
    return ["t"] + [f"lambda={lam:g}" for lam in lambdas]


def write_strain_table(path, results) -> Path:
    """Table of strain L-infinity norms: one row per time level, one column per lambda."""
    results = list(results)
    if not results:
        return write_csv(path, ["t"], [])
    times = results[0].times
    rows = [[t] + [r.strain[i] for r in results] for i, t in enumerate(times)]
    return write_csv(path, strain_columns([r.lam for r in results]), rows)


# --- VTK XML UnstructuredGrid, appended raw binary, UInt64 block headers -----

VTK_QUAD = 9


def lattice_fields(state: SystemState, umap: DofMap, vmap: DofMap, pmap: DofMap):
    """Point data on the Q2 node lattice.

    Displacement and velocity are their nodal coefficients; pressure is the
    Q1 field evaluated at the lattice; the strain norm is averaged over the
    cells sharing a node.
    """
    ref_nodes = umap.element.node_coords
    nodes = umap.cell_nodes.ravel()
    n = umap.n_nodes
    _, gu = evaluate(state.u, umap, ref_nodes, with_values=False)
    eps = strain_from_grad(gu)
    snorm = np.sqrt((eps**2).sum(axis=(-1, -2))).ravel()
    count = np.bincount(nodes, minlength=n)
    strain = np.bincount(nodes, weights=snorm, minlength=n) / count
    pv, _ = evaluate(state.p, pmap, ref_nodes)
    pressure = np.zeros(n)
    pressure[nodes] = pv.ravel()
    pad = np.zeros((n, 1))
    return {
        "displacement": np.hstack([state.u.reshape(n, 2), pad]),
        "velocity": np.hstack([state.v.reshape(n, 2), pad]),
        "pressure": pressure,
        "strain_norm": strain,
    }


def _sub_quads(dofmap: DofMap) -> np.ndarray:
    ny1, nx1 = dofmap.lattice_shape
    ids = np.arange(ny1 * nx1).reshape(ny1, nx1)
    return np.column_stack([
        ids[:-1, :-1].ravel(), ids[:-1, 1:].ravel(), ids[1:, 1:].ravel(), ids[1:, :-1].ravel()
    ])


def export_vtu(state: SystemState, mesh: Mesh, dofmaps, path) -> Path:
    umap, vmap, pmap = dofmaps
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    point_data = lattice_fields(state, umap, vmap, pmap)
    pts = np.hstack([umap.node_coords, np.zeros((umap.n_nodes, 1))])
    quads = _sub_quads(umap)
    arrays = []  # (section, name, vtk type, components, ndarray)
    for name, arr in point_data.items():
        arrays.append(("point", name, "Float64", arr.shape[1] if arr.ndim == 2 else 1, arr.astype("<f8")))
    arrays.append(("points", "Points", "Float64", 3, pts.astype("<f8")))
    arrays.append(("cells", "connectivity", "Int64", 1, quads.ravel().astype("<i8")))
    arrays.append(("cells", "offsets", "Int64", 1, (4 * np.arange(1, len(quads) + 1)).astype("<i8")))
    arrays.append(("cells", "types", "UInt8", 1, np.full(len(quads), VTK_QUAD, dtype="u1")))

    offset = 0
    tags = {"point": [], "points": [], "cells": []}
    blobs = []
    for section, name, vtype, ncomp, arr in arrays:
        raw = np.ascontiguousarray(arr).tobytes()
        tags[section].append(
            f'<DataArray type="{vtype}" Name="{name}" NumberOfComponents="{ncomp}" '
            f'format="appended" offset="{offset}"/>'
        )
        blobs.append(struct.pack("<Q", len(raw)) + raw)
        offset += 8 + len(raw)

    header = (
        '<?xml version="1.0"?>\n'
        '<VTKFile type="UnstructuredGrid" version="1.0" byte_order="LittleEndian" header_type="UInt64">\n'
        "<UnstructuredGrid>\n"
        f'<Piece NumberOfPoints="{umap.n_nodes}" NumberOfCells="{len(quads)}">\n'
        f'<FieldData><DataArray type="Float64" Name="TimeValue" NumberOfTuples="1" format="ascii">'
        f"{state.t!r}</DataArray></FieldData>\n"
        '<PointData Scalars="pressure" Vectors="velocity">\n' + "\n".join(tags["point"]) + "\n</PointData>\n"
        "<Points>\n" + "\n".join(tags["points"]) + "\n</Points>\n"
        "<Cells>\n" + "\n".join(tags["cells"]) + "\n</Cells>\n"
        "</Piece>\n</UnstructuredGrid>\n"
        '<AppendedData encoding="raw">\n_'
    )
    with open(path, "wb") as fh:
        fh.write(header.encode())
        for b in blobs:
            fh.write(b)
        fh.write(b"\n</AppendedData>\n</VTKFile>\n")
    return path


_VTK_DTYPES = {"Float64": "<f8", "Int64": "<i8", "UInt8": "u1"}


def read_vtu(path) -> dict:
    """Read back the arrays of a file written by :func:`export_vtu`."""
    data = Path(path).read_bytes()
    marker = b'<AppendedData encoding="raw">\n_'
    start = data.index(marker)
    xml_part = data[:start].decode() + "</VTKFile>"
    # close the open elements so the header parses as XML
    xml_part = xml_part.replace("</VTKFile>", "") + "</VTKFile>"
    root = ET.fromstring(xml_part)
    base = start + len(marker)
    out = {}
    for da in root.iter("DataArray"):
        if da.get("format") != "appended":
            continue
        off = base + int(da.get("offset"))
        (nbytes,) = struct.unpack("<Q", data[off:off + 8])
        arr = np.frombuffer(data[off + 8:off + 8 + nbytes], dtype=_VTK_DTYPES[da.get("type")])
        ncomp = int(da.get("NumberOfComponents", "1"))
        out[da.get("Name")] = arr.reshape(-1, ncomp) if ncomp > 1 else arr
    return out
