"""Command-line front end: ``qstate simulate|reconstruct|compare|report``.

Exit codes: 0 success, 2 configuration error, 3 truncation tail too heavy,
4 dataset/method or dimension mismatch, 5 hard method error.
"""

from __future__ import annotations

import json
import math
import os
import sys
import time
import warnings
from pathlib import Path

import click
import numpy as np

from . import __version__
from . import io as qio
from .detection import (
    HomodyneDataset,
    ProbeConfig,
    equidistant_phases,
    rabi_frequencies,
    sample_homodyne,
    simulate_displaced_counts,
    simulate_jc_inversion,
    simulate_pm_difference,
    simulate_quadrature_probe,
)
from .errors import QStateError, TailTooHeavy
from .inference import max_entropy_estimate
from .patterns import eta_compensated_table, phase_moment_kernel
from .states import (
    DEFAULT_GRID,
    DensityMatrix,
    Grid1D,
    PhaseSpaceGrid,
    build_state,
    compare_states,
    phase_space_function,
    spec_from_dict,
)
from .tomography import (
    CharacteristicSamples,
    ReconstructionReport,
    bin_dataset,
    circle_inversion_displaced,
    density_from_characteristic,
    density_quadrature_basis,
    endoscopy_invert,
    fbp_phase_space,
    moments_sampling,
    phase_moments_sampling,
    pointwise_phase_space,
    sample_density_fock,
)

EXIT_CONFIG, EXIT_TAIL, EXIT_MISMATCH, EXIT_METHOD = 2, 3, 4, 5
METHODS = ("fbp", "pattern", "quadbasis", "circle", "pointwise", "moments", "phasemoments", "endoscopy", "maxent")
DATASET_KINDS = {
    "fbp": "homodyne",
    "pattern": "homodyne",
    "quadbasis": "homodyne",
    "moments": "homodyne",
    "phasemoments": "homodyne",
    "maxent": "homodyne",
    "circle": "displaced",
    "pointwise": "displaced",
    "endoscopy": "probe",
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _out_dir(out: str | None) -> Path:
    base = out or os.environ.get("QSTATE_OUT") or "."
    p = Path(base)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _manifest(out: Path, command: str, config_digest: str | None, inputs, outputs, seed, started: float):
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config_digest": config_digest,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "tool_version": __version__,
        "wall_time_s": round(time.perf_counter() - started, 3),
    }
    qio.write_json(manifest, out / f"manifest_{command}.json")


# --------------------------------------------------------------------------
# configuration


def _field(cfg: dict, path: str, kind, default=None, required=False):
    node = cfg
    parts = path.split(".")
    for p in parts[:-1]:
        node = node.get(p, {}) if isinstance(node, dict) else {}
    if not isinstance(node, dict) or parts[-1] not in node:
        if required:
            raise CliError(EXIT_CONFIG, f"config field '{path}' is required")
        return default
    val = node[parts[-1]]
    try:
        return kind(val) if val is not None else None
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"config field '{path}': {exc}") from exc


def load_config(path: str) -> dict:
    text = Path(path).read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise CliError(EXIT_CONFIG, f"{path}: top level must be an object")
    for key in ("state", "channel"):
        if key not in cfg:
            raise CliError(EXIT_CONFIG, f"config field '{key}' is required")
    if cfg["channel"] not in ("homodyne", "displaced", "probe"):
        raise CliError(EXIT_CONFIG, f"config field 'channel': unknown channel {cfg['channel']!r}")
    if not isinstance(cfg["state"], dict) or "n_max" not in cfg["state"]:
        raise CliError(EXIT_CONFIG, "config field 'state.n_max' is required")
    return cfg


def _phases_from(value) -> np.ndarray:
    if isinstance(value, int):
        if value < 1:
            raise ValueError("phase count must be >= 1")
        return equidistant_phases(value)
    return np.asarray(value, float)


def _alphas_from(spec) -> np.ndarray:
    if isinstance(spec, dict) and "circle" in spec:
        c = spec["circle"]
        J = int(c["points"])
        return float(c["radius"]) * np.exp(2j * math.pi * np.arange(J) / J)
    if isinstance(spec, dict) and "grid" in spec:
        g = spec["grid"]
        ax = np.linspace(float(g["min"]), float(g["max"]), int(g["points"]))
        A, B = np.meshgrid(ax, ax, indexing="ij")
        return (A + 1j * B).reshape(-1)
    return np.array([complex(a[0], a[1]) if isinstance(a, list) else complex(a) for a in spec])


def _times_from(spec) -> np.ndarray:
    if isinstance(spec, dict):
        return np.linspace(float(spec.get("start", 0.0)), float(spec["stop"]), int(spec["num"]))
    return np.asarray(spec, float)


# --------------------------------------------------------------------------
# commands


@click.group()
@click.version_option(__version__)
def main_group():
    """Simulate quantum-optical measurements and reconstruct states."""


def _run(fn, *args):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            result = fn(*args)
        except CliError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.code)
        except TailTooHeavy as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_TAIL)
        except QStateError as exc:
            click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
            sys.exit(EXIT_METHOD)
    for w in caught:
        click.echo(f"warning: {w.category.__name__}: {w.message}", err=True)
    return result


@main_group.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", default=None, help="Output directory (default $QSTATE_OUT or cwd).")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
def simulate(config_path, out, seed):
    """Simulate a measurement channel from a JSON config."""
    _run(_simulate, config_path, out, seed)


def _simulate(config_path, out, seed):
    started = time.perf_counter()
    cfg = load_config(config_path)
    try:
        spec = spec_from_dict(cfg["state"])
    except QStateError as exc:
        raise CliError(EXIT_CONFIG, f"config field 'state': {exc}") from exc
    n_max = _field(cfg, "state.n_max", int, required=True)
    tail_tol = _field(cfg, "state.tail_tol", float, 1e-8)
    seed = _field(cfg, "seed", int, 0) if seed is None else seed
    rho = build_state(spec, n_max, tail_tol)
    outdir = _out_dir(out)
    outputs = []
    truth = outdir / "truth.json"
    qio.write_json({"type": "density_matrix", **rho.to_dict()}, truth)
    outputs.append(truth)
    ch = cfg["channel"]
    if ch == "homodyne":
        try:
            phases = _phases_from(cfg.get("homodyne", {}).get("phases", 16))
        except (TypeError, ValueError) as exc:
            raise CliError(EXIT_CONFIG, f"config field 'homodyne.phases': {exc}") from exc
        n = _field(cfg, "homodyne.samples_per_phase", int, 1000)
        eta = _field(cfg, "homodyne.eta", float, 1.0)
        lo = _field(cfg, "homodyne.lo_photon_number", float, math.inf)
        ds = sample_homodyne(rho, phases, n, eta, seed, math.inf if lo is None else lo)
        path = outdir / "homodyne.csv"
        qio.write_homodyne(ds, path)
        outputs += [path, qio.sidecar(path)]
    elif ch == "displaced":
        try:
            alphas = _alphas_from(cfg.get("displaced", {}).get("alphas", {"circle": {"radius": 0.8, "points": 8}}))
        except (KeyError, TypeError, ValueError) as exc:
            raise CliError(EXIT_CONFIG, f"config field 'displaced.alphas': {exc}") from exc
        ds = simulate_displaced_counts(
            rho,
            alphas,
            _field(cfg, "displaced.eta", float, 1.0),
            _field(cfg, "displaced.shots", int, 1000),
            _field(cfg, "displaced.chopping_N", int, None),
            seed,
        )
        path = outdir / "counts.csv"
        qio.write_counts(ds, path)
        outputs += [path, qio.sidecar(path)]
    else:
        p = cfg.get("probe", {})
        try:
            times = _times_from(p.get("times", {"stop": 50.0, "num": 5001}))
        except (KeyError, TypeError, ValueError) as exc:
            raise CliError(EXIT_CONFIG, f"config field 'probe.times': {exc}") from exc
        kind = p.get("kind", "inversion")
        alpha = p.get("alpha")
        alpha = None if alpha is None else (complex(*alpha) if isinstance(alpha, list) else complex(alpha))
        base = dict(
            Omega_L=_field(cfg, "probe.Omega_L", float, 1.0),
            k=_field(cfg, "probe.k", int, 1 if kind != "quadrature" else 0),
            eta_LD=_field(cfg, "probe.eta_LD", float, 0.0),
        )
        meta = {**base, "probe_kind": kind, "n_max": n_max, "alpha": alpha}
        if kind == "inversion":
            signals = [simulate_jc_inversion(rho, ProbeConfig(times, alpha=alpha, **base))]
        elif kind == "pm":
            signals = [simulate_pm_difference(rho, ProbeConfig(times, alpha=alpha, psi=psi, **base)) for psi in (0.0, math.pi / 2)]
        elif kind == "quadrature":
            nph = _field(cfg, "probe.phases", int, n_max + 1)
            phases = equidistant_phases(nph)
            signals = []
            for j, phi in enumerate(phases):
                a, b = simulate_quadrature_probe(rho, ProbeConfig(times, phi=phi, **base))
                signals += [type(a)(a.times, a.values, f"{a.channel}:{j}"), type(b)(b.times, b.values, f"{b.channel}:{j}")]
            meta["phases"] = phases
        else:
            raise CliError(EXIT_CONFIG, f"config field 'probe.kind': unknown kind {kind!r}")
        path = outdir / "probe.csv"
        qio.write_probe(signals, path, meta)
        outputs += [path, qio.sidecar(path)]
    _manifest(outdir, "simulate", qio.digest(cfg), [config_path], outputs, seed, started)
    click.echo(f"wrote {', '.join(str(o) for o in outputs)}")


def _dataset_kind(path: Path) -> str:
    side = qio.sidecar(path)
    if not side.exists():
        raise CliError(EXIT_MISMATCH, f"{path}: missing sidecar {side}")
    return qio.read_json(side).get("kind", "")


def _fidelity_with_error(est: DensityMatrix, errors, truth: DensityMatrix) -> dict:
    d = min(est.dim, truth.dim)
    T = truth.padded(max(est.dim, truth.dim)).elements
    E = est.padded(max(est.dim, truth.dim)).elements
    out = compare_states(DensityMatrix(E), DensityMatrix(T))
    if errors is not None:
        S = np.zeros(T.shape)
        S[: errors.shape[0], : errors.shape[1]] = errors
        out["fidelity_error"] = float(math.sqrt(np.sum(np.abs(T) ** 2 * S ** 2)))
    out["compared_dim"] = d
    return out


def _hermitian_moment_observables(n_max: int, order: int):
    a = np.diag(np.sqrt(np.arange(1, n_max + 1)), 1)
    ad = a.T
    obs, keys = [], []
    for n in range(order + 1):
        for m in range(n, order + 1 - n):
            if n + m == 0:
                continue
            op = np.linalg.matrix_power(ad, n) @ np.linalg.matrix_power(a, m)
            if n == m:
                obs.append(op)
                keys.append((n, m, "re"))
            else:
                obs.append(0.5 * (op + op.conj().T))
                keys.append((n, m, "re"))
                obs.append(-0.5j * (op - op.conj().T))
                keys.append((n, m, "im"))
    return obs, keys


@main_group.command()
@click.argument("dataset", type=click.Path(exists=True, dir_okay=False))
@click.option("--method", type=click.Choice(METHODS), required=True)
@click.option("--out", default=None)
@click.option("--truth", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--n-max", "n_max", type=int, default=6)
@click.option("--z-cut", "z_cut", type=float, default=6.0)
@click.option("--s", "s_target", type=float, default=None, help="Ordering parameter for fbp/pointwise.")
@click.option("--order", type=int, default=2, help="Highest moment order for moments/phasemoments/maxent.")
@click.option("--lambda", "lam", type=float, default=None, help="Reserved for regularized solvers.")
@click.option("--sigma0", type=float, default=None, help="Singular-value cut for circle inversion.")
@click.option("--phases", type=int, default=None, help="Use only the first N phases of the dataset.")
@click.option("--seed", type=int, default=None, help="Recorded in the manifest.")
def reconstruct(dataset, method, out, truth, n_max, z_cut, s_target, order, lam, sigma0, phases, seed):
    """Reconstruct from a dataset with the chosen method."""
    _run(_reconstruct, dataset, method, out, truth, n_max, z_cut, s_target, order, lam, sigma0, phases, seed)


def _reconstruct(dataset, method, out, truth, n_max, z_cut, s_target, order, lam, sigma0, phases, seed):
    started = time.perf_counter()
    path = Path(dataset)
    kind = _dataset_kind(path)
    if DATASET_KINDS[method] != kind:
        raise CliError(EXIT_MISMATCH, f"method {method!r} needs a {DATASET_KINDS[method]} dataset, got {kind!r}")
    outdir = _out_dir(out)
    outputs = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if kind == "homodyne":
            ds = qio.read_homodyne(path)
            if phases is not None:
                ds = _phase_subset(ds, phases)
        if method == "fbp":
            rep = fbp_phase_space(bin_dataset(ds, 400), z_cut, None, ds.eta, s_target)
            csv_path = outdir / "wigner.csv" if rep.method["s"] == 0 else outdir / "phase_space.csv"
            qio.write_phase_space_csv(rep.estimate, csv_path)
            outputs.append(csv_path)
        elif method == "pattern":
            grid = _grid_for(ds)
            table = eta_compensated_table(n_max, grid, ds.eta)
            rep = sample_density_fock(ds, n_max, table)
        elif method == "quadbasis":
            dist = bin_dataset(ds, 200).to_distribution()
            xs = np.linspace(-3, 3, 25)
            X, XP = np.meshgrid(xs, 0.5 * xs, indexing="ij")
            vals = density_quadrature_basis(dist, X, XP, 0.0, z_max=min(z_cut * 2, 12.0), nodes=200)
            rep = ReconstructionReport(
                {"x": xs, "x_prime": 0.5 * xs, "re": vals.real, "im": vals.imag},
                None,
                {"tag": "quadbasis", "phi": 0.0, "bins": 200},
            )
            csv_path = outdir / "quadrature_basis.csv"
            with csv_path.open("w") as fh:
                fh.write("x,x_prime,re,im\n")
                for i in range(X.shape[0]):
                    for j in range(X.shape[1]):
                        fh.write(f"{qio.fmt(X[i, j])},{qio.fmt(XP[i, j])},{qio.fmt(vals[i, j].real)},{qio.fmt(vals[i, j].imag)}\n")
            outputs.append(csv_path)
        elif method == "moments":
            res = {}
            for n in range(order + 1):
                for m in range(order + 1 - n):
                    if n + m:
                        v, e = moments_sampling(ds, n, m)
                        res[f"{n},{m}"] = {"value": [v.real, v.imag], "std_error": e}
            rep = ReconstructionReport(res, None, {"tag": "moments", "order": order, "eta": ds.eta, "phases": int(ds.phases.size)})
        elif method == "phasemoments":
            res = {}
            for k in range(1, order + 1):
                K = phase_moment_kernel(k, DEFAULT_GRID)
                v, e = phase_moments_sampling(ds, k, K)
                res[str(k)] = {"value": [v.real, v.imag], "std_error": e}
            rep = ReconstructionReport(res, None, {"tag": "phasemoments", "order": order, "n_sum": 64, "phases": int(ds.phases.size)})
        elif method == "maxent":
            obs, keys = _hermitian_moment_observables(n_max, order)
            means, sig = [], []
            for n, m, part in keys:
                v, e = moments_sampling(ds, n, m)
                means.append(v.real if part == "re" else v.imag)
                sig.append(e)
            res = max_entropy_estimate(obs, means, n_max, sigma=np.array(sig))
            rep = ReconstructionReport(
                res.state,
                None,
                {"tag": "maxent", "n_max": n_max, "order": order, "observables": [f"{n},{m},{p}" for n, m, p in keys]},
                {"multipliers": res.multipliers, "residual": res.residual, "fallback": res.fallback, "iterations": res.iterations},
            )
        elif method in ("circle", "pointwise"):
            cds = qio.read_counts(path)
            if method == "circle":
                rep = circle_inversion_displaced(cds, n_max, sigma0)
            else:
                s = 0.0 if s_target is None else s_target
                pe = pointwise_phase_space(cds, s)
                rep = ReconstructionReport(
                    {"alphas": pe.alphas, "values": pe.values},
                    pe.std_errors,
                    {"tag": "pointwise", "s": s, "eta": cds.eta, "series_weight": pe.weight},
                )
        elif method == "endoscopy":
            rep = _endoscopy(path, n_max)
        if lam is not None:
            rep.method["lambda"] = lam
        rep.diagnostics.setdefault("warnings", [])
        rep.diagnostics["warnings"] = list(rep.diagnostics["warnings"]) + [f"{w.category.__name__}: {w.message}" for w in caught]
    if truth is not None:
        t = DensityMatrix.from_dict(qio.read_json(truth))
        if not isinstance(rep.estimate, DensityMatrix):
            raise CliError(EXIT_MISMATCH, f"method {method!r} does not produce a density matrix")
        rep.diagnostics["truth"] = _fidelity_with_error(rep.estimate, rep.std_errors, t)
    rpath = outdir / "report.json"
    qio.write_json(qio.report_to_dict(rep), rpath)
    outputs.insert(0, rpath)
    _manifest(outdir, "reconstruct", qio.digest({"method": method, "n_max": n_max, "z_cut": z_cut, "s": s_target, "order": order, "sigma0": sigma0, "phases": phases}), [dataset] + ([truth] if truth else []), outputs, seed, started)
    click.echo(f"wrote {', '.join(str(o) for o in outputs)}")


def _phase_subset(ds: HomodyneDataset, n: int) -> HomodyneDataset:
    """Every ``N/n``-th phase, which keeps an equidistant set equidistant."""
    total = ds.phases.size
    if n < 1 or total % n:
        raise CliError(EXIT_MISMATCH, f"--phases {n} does not divide the {total} recorded phases")
    step = total // n
    order = np.argsort(ds.phases)[::step]
    return HomodyneDataset(ds.phases[order], tuple(ds.samples[i] for i in order), ds.eta, ds.lo_photon_number, ds.rng_seed)


def _grid_for(ds: HomodyneDataset) -> Grid1D:
    reach = max(float(np.max(np.abs(s))) for s in ds.samples)
    if reach < DEFAULT_GRID.x_max - 0.5:
        return DEFAULT_GRID
    half = math.ceil(reach + 1.0)
    return Grid1D(-half, half, int(64 * 2 * half))


def _endoscopy(path: Path, n_max: int) -> ReconstructionReport:
    meta = qio.read_json(qio.sidecar(path))
    signals = {s.channel: s for s in qio.read_probe(path)}
    kind = meta.get("probe_kind", "inversion")
    dim = int(meta.get("n_max", n_max))
    if kind == "quadrature":
        phases = np.asarray(meta["phases"], float)
        vals = np.array([-signals[f"characteristic_re:{j}"].values - 1j * signals[f"characteristic_im:{j}"].values for j in range(phases.size)])
        t = signals["characteristic_re:0"].times
        z = math.sqrt(2.0) * float(meta["Omega_L"]) * t
        return density_from_characteristic(CharacteristicSamples(z, phases, vals), min(n_max, phases.size - 1))
    om = rabi_frequencies(int(meta["k"]), float(meta["eta_LD"]), dim, float(meta["Omega_L"]))
    if kind == "inversion":
        coef, diag = endoscopy_invert(signals["inversion"], om)
        rho = DensityMatrix(np.diag(coef), "endoscopy")
        return ReconstructionReport(rho, None, {"tag": "endoscopy", "k": int(meta["k"]), "n_max": dim}, diag)
    k = int(meta["k"])
    a = []
    for ch in ("pm_difference(0.0)", f"pm_difference({math.pi / 2!r})"):
        c, diag = endoscopy_invert(signals[ch], om[: dim + 1 - k], kind="sin")
        a.append(0.5 * c)
    coh = a[1] + 1j * a[0]
    return ReconstructionReport({"offdiagonal_k": k, "rho_n_n_plus_k": coh}, None, {"tag": "endoscopy", "k": k, "n_max": dim}, diag)


def _load_report(path) -> ReconstructionReport:
    try:
        return qio.report_from_dict(qio.read_json(path))
    except (QStateError, json.JSONDecodeError, OSError) as exc:
        raise CliError(EXIT_MISMATCH, f"{path}: {exc}") from exc


def _load_state_like(path):
    d = qio.read_json(path)
    if "estimate" in d:
        rep = _load_report(path)
        if not isinstance(rep.estimate, DensityMatrix):
            raise CliError(EXIT_MISMATCH, f"{path}: report holds no density matrix")
        return rep.estimate, rep.std_errors
    try:
        return DensityMatrix.from_dict(d), None
    except (QStateError, KeyError) as exc:
        raise CliError(EXIT_MISMATCH, f"{path}: {exc}") from exc


@main_group.command()
@click.argument("report_a", type=click.Path(exists=True, dir_okay=False))
@click.argument("report_b", type=click.Path(exists=True, dir_okay=False), required=False)
@click.option("--truth", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", default=None)
def compare(report_a, report_b, truth, out):
    """Compare a report with another report or a truth state."""
    _run(_compare, report_a, report_b, truth, out)


def _compare(report_a, report_b, truth, out):
    started = time.perf_counter()
    other = report_b or truth
    if other is None:
        raise CliError(EXIT_CONFIG, "give a second report or --truth")
    A, sa = _load_state_like(report_a)
    B, sb = _load_state_like(other)
    if A.dim != B.dim:
        big, small = (A, B) if A.dim > B.dim else (B, A)
        excess = float(np.real(np.trace(big.elements)) - np.real(np.trace(big.elements[: small.dim, : small.dim])))
        if abs(excess) > 1e-6:
            raise CliError(EXIT_MISMATCH, f"dimension mismatch: {A.dim} vs {B.dim} with {excess:.2e} weight outside the common block")
        A, B = A.padded(big.dim), B.padded(big.dim)
        sa = None if sa is None else np.pad(sa, (0, big.dim - sa.shape[0]))
        sb = None if sb is None else np.pad(sb, (0, big.dim - sb.shape[0]))
    res = compare_states(A, B)
    var = np.zeros((A.dim, A.dim))
    if sa is not None:
        var += sa ** 2
    if sb is not None:
        var += sb ** 2
    if np.any(var > 0):
        with np.errstate(divide="ignore", invalid="ignore"):
            zr = np.where(var > 0, (A.elements.real - B.elements.real) / np.sqrt(var), 0.0)
            zi = np.where(var > 0, (A.elements.imag - B.elements.imag) / np.sqrt(var), 0.0)
        res["z_scores_re"] = zr
        res["z_scores_im"] = zi
        res["fraction_within_1"] = float(np.mean(np.abs(zr[var > 0]) < 1))
    outdir = _out_dir(out)
    path = outdir / "comparison.json"
    qio.write_json(res, path)
    _manifest(outdir, "compare", None, [report_a, other], [path], None, started)
    click.echo(f"fidelity {res['fidelity']:.6f} trace_distance {res['trace_distance']:.6f}")


def _quadrature_variance(rho: DensityMatrix, phis: np.ndarray) -> np.ndarray:
    d = rho.dim
    a = np.diag(np.sqrt(np.arange(1, d)), 1)
    out = []
    for phi in phis:
        x = (a * np.exp(-1j * phi) + a.T * np.exp(1j * phi)) / math.sqrt(2)
        m1 = np.real(np.trace(rho.elements @ x))
        m2 = np.real(np.trace(rho.elements @ x @ x))
        out.append(m2 - m1 * m1)
    return np.array(out)


@main_group.command()
@click.argument("report", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", default=None)
def report(report, out):
    """Summary text and plot-ready data from a report."""
    _run(_report, report, out)


def _report(report_path, out):
    started = time.perf_counter()
    rep = _load_report(report_path)
    outdir = _out_dir(out)
    outputs = []
    lines = [f"method: {rep.method.get('tag')}", f"library_version: {rep.method.get('library_version')}"]
    est = rep.estimate
    if isinstance(est, DensityMatrix):
        ax = np.linspace(-4, 4, 41)
        grid = PhaseSpaceGrid(ax, ax, convention="qp")
        # exact representations of the (possibly indefinite) estimate
        for name, s in (("wigner", 0.0), ("q", -1.0)):
            g = phase_space_function(est, s, grid)
            p = outdir / f"{name}.csv"
            qio.write_phase_space_csv(g, p)
            outputs.append(p)
        p = outdir / "photon_numbers.csv"
        err = np.diag(rep.std_errors) if rep.std_errors is not None else np.zeros(est.dim)
        with p.open("w") as fh:
            fh.write("n,p,error\n")
            for n, (v, e) in enumerate(zip(est.diag, err)):
                fh.write(f"{n},{qio.fmt(v)},{qio.fmt(e)}\n")
        outputs.append(p)
        phis = np.linspace(0, 2 * math.pi, 73)
        var = _quadrature_variance(est, phis)
        p = outdir / "variance_vs_phase.csv"
        with p.open("w") as fh:
            fh.write("phi,variance\n")
            for f, v in zip(phis, var):
                fh.write(f"{qio.fmt(f)},{qio.fmt(v)}\n")
        outputs.append(p)
        lines.append(f"dimension: {est.dim}")
        lines.append(f"trace: {np.real(np.trace(est.elements)):.6f}")
        lines.append(f"min eigenvalue: {np.linalg.eigvalsh(est.elements).min():.3e}")
        lines.append("photon numbers:")
        for n, (v, e) in enumerate(zip(est.diag, err)):
            bar = "#" * int(round(40 * max(v, 0.0)))
            lines.append(f"  {n:3d} {v:+.4f} +- {e:.4f} {bar}")
        lines.append(f"quadrature variance min/max: {var.min():.4f} / {var.max():.4f}")
    elif isinstance(est, PhaseSpaceGrid):
        p = outdir / "phase_space.csv"
        qio.write_phase_space_csv(est, p)
        outputs.append(p)
        i, j = np.unravel_index(np.argmax(np.abs(est.values)), est.values.shape)
        lines.append(f"s: {est.s}")
        lines.append(f"max |P| at (q, p) = ({est.a[i]:.3f}, {est.b[j]:.3f})")
        lines.append(f"integral: {est.integral():.4f}")
    else:
        lines.append("estimate: " + qio.dumps(est).strip())
    for w in rep.diagnostics.get("warnings", []):
        lines.append(f"warning: {w}")
    text = "\n".join(lines) + "\n"
    p = outdir / "summary.txt"
    p.write_text(text)
    outputs.append(p)
    _manifest(outdir, "report", None, [report_path], outputs, None, started)
    click.echo(text, nl=False)


def main(argv=None):
    """Console entry point."""
    try:
        main_group.main(args=argv, prog_name="qstate", standalone_mode=True)
    except SystemExit as exc:
        if exc.code not in (0, None):
            raise
        raise SystemExit(0)


if __name__ == "__main__":
    main()
