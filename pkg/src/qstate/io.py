"""On-disk formats.

Floats are written with 17 significant digits so that every value replays
bit-exactly. JSON output is produced by a small deterministic writer (fixed
key order, fixed float format) so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .detection import SCALING, DisplacedCountDataset, HomodyneDataset, ProbeSignal
from .errors import InvalidSpec
from .patterns import PatternTable
from .states import DensityMatrix, Grid1D, PhaseSpaceGrid
from .tomography import ReconstructionReport


def fmt(v) -> str:
    """Float with 17 significant digits; infinities and NaN as bare words."""
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


def _to_plain(obj):
    if isinstance(obj, dict):
        return {str(k): _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _to_plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    return obj


def _emit(obj, indent: int, level: int, out: list):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        items = list(obj.items())
        for i, (k, v) in enumerate(items):
            out.append(pad + json.dumps(k) + ": ")
            _emit(v, indent, level + 1, out)
            out.append(",\n" if i < len(items) - 1 else "\n")
        out.append(end + "}")
    elif isinstance(obj, list):
        if not obj:
            out.append("[]")
        elif all(not isinstance(v, (dict, list)) for v in obj):
            out.append("[")
            for i, v in enumerate(obj):
                _emit(v, indent, level, out)
                if i < len(obj) - 1:
                    out.append(", ")
            out.append("]")
        else:
            out.append("[\n")
            for i, v in enumerate(obj):
                out.append(pad)
                _emit(v, indent, level + 1, out)
                out.append(",\n" if i < len(obj) - 1 else "\n")
            out.append(end + "]")
    elif isinstance(obj, bool):
        out.append("true" if obj else "false")
    elif obj is None:
        out.append("null")
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        # JSON has no infinities; they travel as strings
        out.append(fmt(obj) if math.isfinite(obj) else json.dumps(fmt(obj)))
    else:
        out.append(json.dumps(str(obj)))


def dumps(obj, sort_keys: bool = False) -> str:
    plain = _to_plain(obj)
    if sort_keys:
        plain = json.loads(json.dumps(plain, sort_keys=True))
    out: list[str] = []
    _emit(plain, 2, 0, out)
    return "".join(out) + "\n"


def digest(obj) -> str:
    """SHA-256 of the canonical (key-sorted) JSON form."""
    return hashlib.sha256(dumps(obj, sort_keys=True).encode()).hexdigest()


def write_json(obj, path) -> None:
    Path(path).write_text(dumps(obj))


def read_json(path):
    return json.loads(Path(path).read_text())


def _float(v) -> float:
    return float(v) if not isinstance(v, str) else float(v.replace("Infinity", "inf"))


def sidecar(path) -> Path:
    return Path(path).with_suffix(".json")


# --------------------------------------------------------------------------
# datasets


def write_homodyne(ds: HomodyneDataset, path) -> None:
    """CSV ``phase_index,phi,x`` plus a JSON sidecar with the metadata."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write("phase_index,phi,x\n")
        for k, (phi, xs) in enumerate(zip(ds.phases, ds.samples)):
            p = fmt(phi)
            fh.write("".join(f"{k},{p},{fmt(x)}\n" for x in xs))
    meta = {
        "kind": "homodyne",
        "eta": ds.eta,
        "lo_photon_number": ds.lo_photon_number,
        "seed": ds.rng_seed,
        "scaling": ds.scaling,
        "n_phases": int(ds.phases.size),
    }
    write_json(meta, sidecar(path))


def read_homodyne(path) -> HomodyneDataset:
    path = Path(path)
    meta = read_json(sidecar(path))
    if meta.get("scaling", SCALING) != SCALING:
        raise InvalidSpec(f"unsupported sample scaling {meta.get('scaling')!r}")
    with path.open() as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["phase_index", "phi", "x"]:
            raise InvalidSpec("homodyne CSV must have header phase_index,phi,x")
        rows = np.array([[float(v) for v in r] for r in reader]).reshape(-1, 3)
    idx = rows[:, 0].astype(int)
    n = int(meta.get("n_phases", idx.max() + 1 if idx.size else 0))
    phases = np.zeros(n)
    samples = []
    for k in range(n):
        sel = idx == k
        if np.any(sel):
            phases[k] = rows[sel, 1][0]
        samples.append(rows[sel, 2])
    return HomodyneDataset(phases, tuple(samples), _float(meta["eta"]), _float(meta["lo_photon_number"]), int(meta["seed"]))


def write_counts(ds: DisplacedCountDataset, path) -> None:
    """CSV ``alpha_re,alpha_im,m,count`` plus a JSON sidecar."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write("alpha_re,alpha_im,m,count\n")
        for a, c in zip(ds.alphas, ds.counts):
            re, im = fmt(a.real), fmt(a.imag)
            fh.write("".join(f"{re},{im},{m},{int(v)}\n" for m, v in enumerate(c)))
    meta = {"kind": "displaced", "eta": ds.eta, "shots": ds.shots, "chopping_N": ds.chopping_N, "seed": ds.rng_seed}
    write_json(meta, sidecar(path))


def read_counts(path) -> DisplacedCountDataset:
    path = Path(path)
    meta = read_json(sidecar(path))
    alphas, counts = [], []
    with path.open() as fh:
        reader = csv.reader(fh)
        if next(reader) != ["alpha_re", "alpha_im", "m", "count"]:
            raise InvalidSpec("count CSV must have header alpha_re,alpha_im,m,count")
        for re, im, m, c in reader:
            a = complex(float(re), float(im))
            if not alphas or alphas[-1] != a or int(m) == 0:
                alphas.append(a)
                counts.append([])
            counts[-1].append(int(c))
    return DisplacedCountDataset(np.array(alphas), tuple(np.array(c) for c in counts), _float(meta["eta"]), meta.get("chopping_N"), int(meta.get("shots", 0)), int(meta.get("seed", 0)))


def write_probe(signals, path, meta: dict | None = None) -> None:
    """CSV ``t,value,channel`` holding one or more signals."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write("t,value,channel\n")
        for s in signals:
            fh.write("".join(f"{fmt(t)},{fmt(v)},{s.channel}\n" for t, v in zip(s.times, s.values)))
    if meta is not None:
        write_json({"kind": "probe", **meta}, sidecar(path))


def read_probe(path) -> list[ProbeSignal]:
    chans: dict[str, list] = {}
    with Path(path).open() as fh:
        reader = csv.reader(fh)
        if next(reader) != ["t", "value", "channel"]:
            raise InvalidSpec("probe CSV must have header t,value,channel")
        for t, v, ch in reader:
            chans.setdefault(ch, []).append((float(t), float(v)))
    return [ProbeSignal(np.array(r)[:, 0], np.array(r)[:, 1], ch) for ch, r in chans.items()]


# --------------------------------------------------------------------------
# pattern tables


def write_pattern_table(table: PatternTable, path) -> None:
    """JSON header plus CSV body ``m,n,x_index,value`` (upper triangle)."""
    path = Path(path)
    header = {"n_max": table.n_max, "grid": table.grid.to_dict(), "eta": table.eta, "meta": table.meta}
    write_json(header, sidecar(path))
    with path.open("w", newline="") as fh:
        fh.write("m,n,x_index,value\n")
        for m in range(table.n_max + 1):
            for n in range(m, table.n_max + 1):
                fh.write("".join(f"{m},{n},{i},{fmt(v)}\n" for i, v in enumerate(table.values[m, n])))


def read_pattern_table(path) -> PatternTable:
    path = Path(path)
    h = read_json(sidecar(path))
    g = h["grid"]
    grid = Grid1D(float(g["x_min"]), float(g["x_max"]), int(g["n_points"]))
    vals = np.zeros((h["n_max"] + 1, h["n_max"] + 1, grid.n_points))
    with path.open() as fh:
        reader = csv.reader(fh)
        next(reader)
        for m, n, i, v in reader:
            vals[int(m), int(n), int(i)] = vals[int(n), int(m), int(i)] = float(v)
    return PatternTable(grid, int(h["n_max"]), vals, float(h["eta"]), h.get("meta", {}))


def table_cache_key(n_max: int, grid: Grid1D, eta: float, version: str) -> str:
    return digest({"n_max": n_max, "grid": grid.to_dict(), "eta": eta, "version": version})


# --------------------------------------------------------------------------
# reports


def phase_space_to_dict(g: PhaseSpaceGrid) -> dict:
    return {"a": g.a, "b": g.b, "values": g.values, "s": g.s, "convention": g.convention}


def phase_space_from_dict(d: dict) -> PhaseSpaceGrid:
    return PhaseSpaceGrid(np.array(d["a"], float), np.array(d["b"], float), np.array(d["values"], float), float(d["s"]), d["convention"])


def report_to_dict(rep: ReconstructionReport) -> dict:
    est = rep.estimate
    if isinstance(est, DensityMatrix):
        e = {"type": "density_matrix", **est.to_dict()}
    elif isinstance(est, PhaseSpaceGrid):
        e = {"type": "phase_space", **phase_space_to_dict(est)}
    else:
        e = {"type": "value", "value": _to_plain(est)}
    return {
        "estimate": e,
        "std_errors": None if rep.std_errors is None else rep.std_errors,
        "method": rep.method,
        "diagnostics": rep.diagnostics,
    }


def report_from_dict(d: dict) -> ReconstructionReport:
    try:
        e = d["estimate"]
        kind = e["type"]
        if kind == "density_matrix":
            est = DensityMatrix.from_dict(e)
        elif kind == "phase_space":
            est = phase_space_from_dict(e)
        else:
            est = e["value"]
        se = None if d.get("std_errors") is None else np.array(d["std_errors"], float)
        rep = ReconstructionReport(est, se, dict(d["method"]), dict(d.get("diagnostics", {})))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidSpec(f"malformed report: {exc!r}") from exc
    rep.method["library_version"] = d["method"].get("library_version", rep.method["library_version"])
    return rep


def write_phase_space_csv(g: PhaseSpaceGrid, path) -> None:
    """Plot-ready ``q,p,value`` rows in the (q, p) convention."""
    if g.convention == "qp":
        q, p, vals = g.a, g.b, g.values
    else:
        q, p, vals = np.sqrt(2.0) * g.a, np.sqrt(2.0) * g.b, 0.5 * g.values
    with Path(path).open("w", newline="") as fh:
        fh.write("q,p,value\n")
        for i, qi in enumerate(q):
            fq = fmt(qi)
            fh.write("".join(f"{fq},{fmt(pj)},{fmt(vals[i, j])}\n" for j, pj in enumerate(p)))
