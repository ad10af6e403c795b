"""Reconstruction algorithms.

Every sampling estimator accepts either a :class:`HomodyneDataset` (average
over recorded samples) or a :class:`QuadratureDistribution` (trapezoid
integral over the tabulated density). Both are the same linear functional
of the empirical measure, so exact distributions double as noiseless oracles.
Phase integrals are uniform Riemann sums ``(pi/N) sum_k`` over the measured
phases, which must be equidistant on ``[0, pi)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import CubicSpline
from scipy.special import eval_hermite, gammaln

from . import __version__
from .detection import (
    DisplacedCountDataset,
    HomodyneDataset,
    ProbeSignal,
    bernoulli_matrix,
    chopping_matrix,
    invert_chopping,
)
from .errors import (
    DegenerateFrequencies,
    EmptyPhase,
    EtaOutOfRange,
    IllConditioned,
    InsufficientPhaseCoverage,
    KernelTruncationTooLow,
    NearSingular,
    PhaseDeficit,
    PhaseDeficitWarning,
    SeriesRisk,
    UnstableRequest,
    WindowTooShort,
    ZRangeTooShort,
)
from .inference import LinearModel, least_squares, svd_pseudoinverse
from .patterns import PatternTable, PhaseMomentKernel
from .states import (
    DensityMatrix,
    Grid1D,
    PhaseSpaceGrid,
    QuadratureDistribution,
    displacement_matrices,
    hermite_functions,
    laguerre_functions,
    _stats_cutoff,
)

PHASE_TOL = 1e-9


@dataclass
class ReconstructionReport:
    """Estimate with per-element standard errors, method block and diagnostics."""

    estimate: object
    std_errors: np.ndarray | None
    method: dict
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.method = {**self.method, "library_version": __version__}
        if self.std_errors is not None:
            self.std_errors = np.asarray(self.std_errors, float)
            if np.any(self.std_errors < 0):
                raise ValueError("standard errors must be nonnegative")


@dataclass(frozen=True, eq=False)
class EmpiricalQuadratureHistogram:
    """Per-phase histograms on shared, uniform bin edges."""

    phases: np.ndarray
    edges: np.ndarray
    counts: np.ndarray
    eta: float = 1.0

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def densities(self) -> np.ndarray:
        return self.counts / (self.counts.sum(axis=1, keepdims=True) * self.widths)

    def to_distribution(self) -> QuadratureDistribution:
        c = self.centers
        grid = Grid1D(float(c[0]), float(c[-1]), c.size)
        return QuadratureDistribution(self.phases, grid, self.densities, self.eta, "histogram")


def bin_dataset(ds: HomodyneDataset, bins: int) -> EmpiricalQuadratureHistogram:
    """Bin every phase on common uniform edges spanning all samples.

    Raises
    ------
    EmptyPhase
        If some phase has no samples.
    """
    if bins < 8:
        raise ValueError("need at least 8 bins")
    if np.any(ds.counts == 0):
        raise EmptyPhase("a phase has no samples")
    lo = min(float(s.min()) for s in ds.samples)
    hi = max(float(s.max()) for s in ds.samples)
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    counts = np.array([np.histogram(s, edges)[0] for s in ds.samples])
    return EmpiricalQuadratureHistogram(ds.phases.copy(), edges, counts, ds.eta)


# --------------------------------------------------------------------------
# helpers shared by the sampling estimators


def _check_equidistant(phases: np.ndarray) -> int:
    N = phases.size
    ref = math.pi * np.arange(N) / N
    if N == 0 or np.max(np.abs(np.sort(phases) - ref - (np.sort(phases)[0]))) > PHASE_TOL:
        raise InsufficientPhaseCoverage("phases must be equidistant with spacing pi/N on the half circle")
    return N


def _per_phase_stats(data, funcs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Means and variances of ``funcs(x, k)`` per phase.

    Returns ``(means, variances, counts)`` with shapes ``(N, ...)``. For a
    tabulated distribution the variance is zero and the count infinite.
    """
    means, variances, counts = [], [], []
    if isinstance(data, HomodyneDataset):
        for k, x in enumerate(data.samples):
            if x.size == 0:
                raise EmptyPhase(f"phase {k} has no samples")
            F = funcs(x, k)  # (..., n_k)
            mu = F.mean(axis=-1)
            # two-term variance, real and imaginary parts pooled
            var = (np.abs(F) ** 2).mean(axis=-1) - np.abs(mu) ** 2
            if x.size > 1:
                var = var * x.size / (x.size - 1)
            means.append(mu)
            variances.append(np.clip(var, 0.0, None))
            counts.append(x.size)
    elif isinstance(data, QuadratureDistribution):
        x = data.grid.x
        for k in range(data.phases.size):
            F = funcs(x, k)
            means.append(np.trapezoid(F * data.values[k], x, axis=-1))
            variances.append(np.zeros(np.shape(means[-1])))
            counts.append(math.inf)
    else:
        raise TypeError("expected HomodyneDataset or QuadratureDistribution")
    return np.array(means), np.array(variances), np.array(counts, float)


def _phase_sum(means, variances, counts, weight: float):
    """``weight * sum_k mean_k`` and its standard error."""
    est = weight * means.sum(axis=0)
    err = weight * np.sqrt(np.sum(variances / counts.reshape((-1,) + (1,) * (variances.ndim - 1)), axis=0))
    return est, err


def _table_evaluator(table: PatternTable, n_max: int):
    pairs = [(m, n) for m in range(n_max + 1) for n in range(m, n_max + 1)]
    vals = np.array([table.values[m, n] for m, n in pairs])  # (P, X)
    spline = CubicSpline(table.grid.x, vals, axis=1)
    lo, hi = table.grid.x_min, table.grid.x_max

    def evaluate(x):
        x = np.asarray(x, float)
        if x.size and (x.min() < lo or x.max() > hi):
            raise ValueError(f"samples outside the table range [{lo}, {hi}]")
        if x.size == table.grid.n_points and np.array_equal(x, table.grid.x):
            return vals
        return spline(x)

    return pairs, evaluate


def _eta_of(data) -> float:
    return float(data.eta)


def _check_table(table: PatternTable, data, n_max: int):
    eta = _eta_of(data)
    if not eta > 0.5:
        raise EtaOutOfRange(f"sampling with loss compensation needs eta > 1/2, got {eta}")
    if abs(table.eta - eta) > 1e-12:
        raise EtaOutOfRange(f"table built for eta={table.eta} but data have eta={eta}")
    if table.n_max < n_max:
        raise ValueError(f"table covers n <= {table.n_max}, need {n_max}")


# --------------------------------------------------------------------------
# Fock-basis sampling


def sample_density_fock(data, n_max: int, table: PatternTable) -> ReconstructionReport:
    """Density matrix by direct sampling with pattern functions.

    ``rho_mn = (pi/N) sum_k < f_mn(x) exp(i(m-n) phi_k) >_k``; the standard
    error is ``(pi/N) sqrt(sum_k var_k / n_k)`` from the per-phase sample
    variance of the sampled function. The estimate is Hermitized; positivity
    is not enforced.
    """
    _check_table(table, data, n_max)
    N = _check_equidistant(data.phases)
    pairs, evaluate = _table_evaluator(table, n_max)
    dk = np.array([m - n for m, n in pairs])
    warns = []
    if N <= n_max:
        msg = f"{N} phases resolve only |m-n| < {N}; higher coherences alias"
        warnings.warn(msg, PhaseDeficitWarning, stacklevel=2)
        warns.append(msg)

    def funcs(x, k):
        return evaluate(x) * np.exp(1j * dk * data.phases[k])[:, None]

    means, var, cnt = _per_phase_stats(data, funcs)
    est, err = _phase_sum(means, var, cnt, math.pi / N)
    rho = np.zeros((n_max + 1, n_max + 1), complex)
    sig = np.zeros((n_max + 1, n_max + 1))
    for (m, n), v, e in zip(pairs, est, err):
        rho[m, n] = v
        rho[n, m] = np.conj(v)
        sig[m, n] = sig[n, m] = e
    herm = 0.5 * (rho + rho.conj().T)
    report = ReconstructionReport(
        DensityMatrix(herm, "pattern"),
        sig,
        {"tag": "pattern", "n_max": n_max, "eta": _eta_of(data), "phases": N, "table": dict(table.meta)},
        {"hermitized": True, "min_eigenvalue": float(np.linalg.eigvalsh(herm).min()), "warnings": warns},
    )
    return report


def photon_statistics_phase_averaged(data, n_max: int, table: PatternTable):
    """``p_n = pi <f_nn(x)>`` averaged over all samples regardless of phase.

    Returns ``(p, std_errors)``.
    """
    _check_table(table, data, n_max)
    diag = np.array([table.values[n, n] for n in range(n_max + 1)])
    if isinstance(data, HomodyneDataset):
        x = np.concatenate(data.samples)
        F = math.pi * CubicSpline(table.grid.x, diag, axis=1)(x)
        p = F.mean(axis=1)
        err = F.std(axis=1, ddof=1) / math.sqrt(x.size)
        return p, err
    x = data.grid.x
    p = math.pi * np.trapezoid(diag[:, None, :] * data.values[None], x, axis=-1).mean(axis=1)
    return p, np.zeros_like(p)


def project_to_density_matrix(rho: DensityMatrix) -> DensityMatrix:
    """Nearest density matrix: clip negative eigenvalues and renormalize."""
    lam, V = np.linalg.eigh(rho.elements)
    lam = np.clip(lam, 0.0, None)
    if lam.sum() <= 0:
        raise ValueError("estimate has no positive part")
    lam = lam / lam.sum()
    return DensityMatrix((V * lam) @ V.conj().T, rho.label + "+projected")


# --------------------------------------------------------------------------
# filtered back projection


def _fbp_kernel(y: np.ndarray, z_c: float, c: float) -> np.ndarray:
    """``int_0^{z_c} z cos(zy) exp(c z^2) dz``."""
    if c == 0.0:
        out = np.empty_like(y)
        small = np.abs(y) < 1e-4
        ys = y[~small]
        out[~small] = z_c * np.sin(z_c * ys) / ys + (np.cos(z_c * ys) - 1.0) / ys ** 2
        yy = y[small]
        out[small] = z_c ** 2 / 2 - z_c ** 4 * yy ** 2 / 8
        return out
    nodes = int(4 * z_c * (np.max(np.abs(y)) + 1) / math.pi) + 64
    t, w = np.polynomial.legendre.leggauss(nodes)
    z = 0.5 * z_c * (t + 1)
    w = 0.5 * z_c * w * z * np.exp(c * z * z)
    return np.cos(np.multiply.outer(y, z)) @ w


def _as_density_samples(data):
    """Per-phase (x nodes, weights) such that int p g dx ~ sum w g(x)."""
    if isinstance(data, EmpiricalQuadratureHistogram):
        data = data.to_distribution()
        x = data.grid.x
        w = data.values * data.grid.dx
        return data.phases, [(x, wk) for wk in w], data.eta
    if isinstance(data, QuadratureDistribution):
        x = data.grid.x
        tw = np.full(x.size, data.grid.dx)
        tw[[0, -1]] *= 0.5
        return data.phases, [(x, data.values[k] * tw) for k in range(data.phases.size)], data.eta
    if isinstance(data, HomodyneDataset):
        return data.phases, [(s, np.full(s.size, 1.0 / s.size)) for s in data.samples], data.eta
    raise TypeError("unsupported data type")


def fbp_phase_space(
    data,
    z_c: float = 6.0,
    out: PhaseSpaceGrid | None = None,
    eta: float | None = None,
    s_target: float | None = None,
    allow_unstable: bool = False,
) -> ReconstructionReport:
    """Phase-space function ``P(q, p; s)`` by filtered back projection.

    ``P(q,p) = 1/(2 pi^2) int_0^pi dphi int dx p(x,phi) K(q cos phi + p sin phi - x)``
    with ``K(y) = int_0^{z_c} z cos(zy) exp[(s - 1 + 1/eta) z^2/4] dz``. The
    default ``s_target = 1 - 1/eta`` removes the exponential factor.

    Raises
    ------
    UnstableRequest
        If ``s_target > 1 - 1/eta`` and ``allow_unstable`` is false.
    """
    phases, per_phase, data_eta = _as_density_samples(data)
    eta = data_eta if eta is None else eta
    s_stable = 1.0 - 1.0 / eta
    s = s_stable if s_target is None else float(s_target)
    if s > s_stable + 1e-12 and not allow_unstable:
        raise UnstableRequest(f"s = {s} exceeds 1 - 1/eta = {s_stable:.4g}; inverse Gaussian filter amplifies noise")
    N = _check_equidistant(phases)
    if out is None:
        ax = np.linspace(-4, 4, 81)
        out = PhaseSpaceGrid(ax, ax, convention="qp")
    if out.convention != "qp":
        raise ValueError("filtered back projection reports on a (q, p) grid")
    c = 0.25 * (s - 1.0 + 1.0 / eta)
    Q, P = np.meshgrid(out.a, out.b, indexing="ij")
    R = float(np.max(np.hypot(Q, P)))
    values = np.zeros(Q.shape)
    for k, (x, w) in enumerate(per_phase):
        lo = min(-R, float(x.min())) - 1.0
        hi = max(R, float(x.max())) + 1.0
        t = np.arange(-R - 0.01, R + 0.02, min(0.01, 0.5 / z_c))
        mask = w != 0
        xs, ws = x[mask], w[mask]
        h = np.empty(t.size)
        for start in range(0, t.size, 256):
            h[start : start + 256] = _fbp_kernel(np.subtract.outer(t[start : start + 256], xs), z_c, c) @ ws
        values += np.interp(Q * math.cos(phases[k]) + P * math.sin(phases[k]), t, h)
    values *= (math.pi / N) / (2 * math.pi ** 2)
    est = PhaseSpaceGrid(out.a, out.b, values, s, "qp")
    return ReconstructionReport(
        est,
        None,
        {"tag": "fbp", "z_c": z_c, "eta": eta, "s": s, "phases": N, "convention": "qp"},
        {"integral": est.integral()},
    )


# --------------------------------------------------------------------------
# quadrature-basis density matrix


def _characteristic_from_distribution(dist: QuadratureDistribution, z: np.ndarray) -> np.ndarray:
    """``Psi(z, phi_k) = int exp(izx) p(x, phi_k) dx`` for all measured phases."""
    x = dist.grid.x
    tw = np.full(x.size, dist.grid.dx)
    tw[[0, -1]] *= 0.5
    E = np.exp(1j * np.outer(z, x)) * tw
    return dist.values @ E.T  # (N, Z)


def _trig_interpolate(samples: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Interpolate periodic samples on ``2 pi j/M`` at angles ``phi``.

    ``samples`` has shape ``(M, Z)``; returns values for each pair
    ``(phi[i], column i)``.
    """
    M = samples.shape[0]
    c = np.fft.fft(samples, axis=0) / M
    freqs = np.fft.fftfreq(M, 1.0 / M)
    if M % 2 == 0:
        c[M // 2] *= 0.5
        c = np.concatenate([c, c[M // 2 : M // 2 + 1]], axis=0)
        freqs = np.concatenate([freqs, [M // 2]])
    return np.einsum("fz,fz->z", c, np.exp(1j * np.outer(freqs, phi)))


def density_quadrature_basis(dist: QuadratureDistribution, x, x_prime, phi: float = 0.0, z_max: float = 12.0, nodes: int = 400):
    """``<x - x', phi| rho |x + x', phi>`` from the quadrature distributions.

    Two Fourier integrals: ``Psi(zt, phit)`` from ``p`` by an x-integral at the
    mapped point ``zt = sqrt(z^2 + 4 x'^2)``, ``phit = phi - pi/2 +
    arg(2x' + iz)``, then ``(1/2pi) int dz exp(-izx) Psi``. Phases between the
    measured ones are filled in by trigonometric interpolation using
    ``p(x, phi + pi) = p(-x, phi)``.

    Raises
    ------
    InsufficientPhaseCoverage
    """
    N = _check_equidistant(dist.phases)
    if N < 2:
        raise InsufficientPhaseCoverage("need at least two phases")
    order = np.argsort(dist.phases)
    dist = QuadratureDistribution(dist.phases[order], dist.grid, dist.values[order], dist.eta, dist.kind)
    x, xp = np.broadcast_arrays(np.asarray(x, float), np.asarray(x_prime, float))
    t, w = np.polynomial.legendre.leggauss(nodes)
    z = z_max * t
    w = z_max * w
    out = np.empty(x.shape, complex)
    for idx in np.ndindex(x.shape):
        xi, xpi = x[idx], xp[idx]
        zt = np.sqrt(z * z + 4 * xpi * xpi)
        pt = phi - 0.5 * math.pi + np.angle(2 * xpi + 1j * z)
        psi_half = _characteristic_from_distribution(dist, zt)  # (N, Z) on [0, pi)
        # extend to the full circle: Psi(z, phi + pi) = conj Psi(z, phi)
        full = np.concatenate([psi_half, psi_half.conj()], axis=0)  # angles pi j / N, j < 2N
        vals = _trig_interpolate(full, np.mod(pt - dist.phases[0], 2 * math.pi))
        out[idx] = np.sum(w * np.exp(-1j * z * xi) * vals) / (2 * math.pi)
    return out if out.ndim else complex(out)


# --------------------------------------------------------------------------
# characteristic-function route


@dataclass(frozen=True, eq=False)
class CharacteristicSamples:
    """``Psi(z, phi)`` on a uniform ``z`` grid starting at 0 and equidistant phases."""

    z: np.ndarray
    phases: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "z", np.asarray(self.z, float))
        object.__setattr__(self, "phases", np.asarray(self.phases, float))
        object.__setattr__(self, "values", np.asarray(self.values, complex))
        if self.values.shape != (self.phases.size, self.z.size):
            raise ValueError("values must have shape (n_phases, n_z)")


def characteristic_from_probe(pairs: Sequence[tuple[ProbeSignal, ProbeSignal]], phases, Omega_L: float = 1.0) -> CharacteristicSamples:
    """Assemble ``Psi = -incoherent - i coherent`` from quadrature-probe signals."""
    vals = np.array([-a.values - 1j * b.values for a, b in pairs])
    z = math.sqrt(2.0) * Omega_L * pairs[0][0].times
    return CharacteristicSamples(z, phases, vals)


def density_from_characteristic(samples: CharacteristicSamples, n_max: int, tail_tol: float = 1e-6) -> ReconstructionReport:
    """Density matrix from the quadrature characteristic function.

    ``rho_mn = (1/N) sum_k exp(i(m-n) phi_k) int_0^inf z l_j^k(z^2/2)
    Re[(-i)^k Psi(z, phi_k)] dz`` with ``j = min(m, n)``, ``k = |m - n|``:
    even orders read ``Re Psi`` only, odd orders ``Im Psi`` only. The
    ``z`` integral uses Simpson's rule on the supplied grid.

    Raises
    ------
    ZRangeTooShort
        If ``|Psi|`` at the last grid point exceeds ``tail_tol``.
    """
    z = samples.z
    if z[0] != 0.0 or np.any(np.diff(z) <= 0):
        raise ValueError("z grid must start at 0 and increase")
    tail = float(np.max(np.abs(samples.values[:, -1])))
    if tail > tail_tol:
        raise ZRangeTooShort(f"|Psi(z_max)| = {tail:.2e} exceeds {tail_tol:.1e}")
    N = _check_equidistant(samples.phases)
    if N < n_max + 1:
        raise PhaseDeficit(f"need at least {n_max + 1} phases, got {N}")
    rho = np.zeros((n_max + 1, n_max + 1), complex)
    u = 0.5 * z * z
    for k in range(n_max + 1):
        ell = laguerre_functions(k, n_max - k, u)  # (n_max-k+1, Z)
        proj = np.real((-1j) ** k * samples.values)  # (N, Z)
        I = simpson(z * ell[:, None, :] * proj[None], x=z, axis=-1)  # (J, N)
        for j in range(n_max - k + 1):
            # row index j+k, column j: exp(i k phi)
            v = np.mean(np.exp(1j * k * samples.phases) * I[j])
            rho[j + k, j] = v
            rho[j, j + k] = np.conj(v)
    herm = 0.5 * (rho + rho.conj().T)
    return ReconstructionReport(
        DensityMatrix(herm, "characteristic"),
        None,
        {"tag": "characteristic", "n_max": n_max, "phases": N, "z_max": float(z[-1])},
        {"tail": tail, "hermitized": True},
    )


# --------------------------------------------------------------------------
# displaced photon counting


def _circle_model(r: float, n_max: int, s: int, m_max: int, eta: float, chopping_N: int | None):
    D = displacement_matrices(r, n_max + 1, m_max + 1).real  # <n|D(r)|m>
    n = np.arange(n_max + 1 - s)
    G = (D[n + s, :] * D[n, :]).T  # (m, n)
    G = bernoulli_matrix(eta, m_max) @ G
    if chopping_N is not None:
        G = chopping_matrix(chopping_N, m_max) @ G
        G = G[: min(chopping_N, m_max) + 1]
    return G


def circle_inversion(
    alphas,
    probabilities: np.ndarray,
    n_max: int,
    eta: float = 1.0,
    chopping_N: int | None = None,
    variances: np.ndarray | None = None,
    sigma0: float | None = None,
) -> ReconstructionReport:
    """Density matrix from displaced count statistics on a circle ``|alpha| = r``.

    The Fourier order ``s`` of the statistics over the circle phase couples
    only to the diagonal ``rho_{n+s, n}``; each order is solved by weighted
    least squares against ``G^s_mn = <n+s|D(r)|m><n|D(r)|m>`` composed with
    the detection and chopping matrices.

    Raises
    ------
    IllConditioned
        If an order's normal matrix is near singular (and no ``sigma0`` cut is given).
    """
    alphas = np.asarray(alphas, complex)
    r = float(np.abs(alphas).mean())
    if np.max(np.abs(np.abs(alphas) - r)) > 1e-9:
        raise ValueError("displacements must share one modulus")
    J = alphas.size
    theta = np.angle(alphas)
    ref = np.sort(np.mod(theta - theta[0], 2 * math.pi))
    if J < 2 * n_max + 1 or np.max(np.abs(ref - 2 * math.pi * np.arange(J) / J)) > PHASE_TOL:
        raise InsufficientPhaseCoverage(f"need {2 * n_max + 1} equidistant phases on the circle, got {J}")
    P = np.asarray(probabilities, float)  # (J, L)
    L = P.shape[1]
    # with chopping the photon numbers behind the clicks extend past the click range
    m_max = L - 1 if chopping_N is None else max(L - 1, _stats_cutoff(n_max, r))
    rho = np.zeros((n_max + 1, n_max + 1), complex)
    sig = np.zeros((n_max + 1, n_max + 1))
    conds = {}
    for s in range(n_max + 1):
        ph = np.exp(1j * s * theta)
        y = ph @ P / J  # (L,)
        G = _circle_model(r, n_max, s, m_max, eta, chopping_N)[:L]
        W = None
        if variances is not None:
            v = np.sum(np.asarray(variances), axis=0) / J ** 2
            W = 1.0 / v
        model = LinearModel(G.astype(complex) if s else G, W)
        try:
            if sigma0 is None:
                res = least_squares(model, y if s else y.real)
            else:
                res = svd_pseudoinverse(model, y if s else y.real, sigma0)
        except NearSingular as exc:
            raise IllConditioned(f"order s={s}: {exc}", exc.condition) from exc
        conds[s] = res.condition
        f = np.asarray(res.estimate)
        err = np.sqrt(np.clip(np.real(np.diag(res.covariance)), 0, None)) if res.covariance is not None else np.zeros(f.size)
        for n in range(f.size):
            rho[n + s, n] = f[n]
            rho[n, n + s] = np.conj(f[n])
            sig[n + s, n] = sig[n, n + s] = err[n]
    herm = 0.5 * (rho + rho.conj().T)
    return ReconstructionReport(
        DensityMatrix(herm, "circle"),
        sig if variances is not None else None,
        {"tag": "circle", "n_max": n_max, "radius": r, "phases": J, "eta": eta, "chopping_N": chopping_N, "sigma0": sigma0},
        {"condition": conds, "hermitized": True},
    )


def circle_inversion_displaced(ds: DisplacedCountDataset, n_max: int, sigma0: float | None = None) -> ReconstructionReport:
    """:func:`circle_inversion` on a count dataset, weighted by multinomial variances.

    Weights use ``(c + 1)(shots - c + 1)/shots^3`` per count so empty bins keep
    a finite variance.
    """
    L = max(c.size for c in ds.counts)
    C = np.zeros((ds.alphas.size, L))
    for i, c in enumerate(ds.counts):
        C[i, : c.size] = c
    shots = C.sum(axis=1, keepdims=True)
    P = C / shots
    var = (C + 1) * (shots - C + 1) / shots ** 3
    return circle_inversion(ds.alphas, P, n_max, ds.eta, ds.chopping_N, var, sigma0)


@dataclass
class PointwiseEstimate:
    alphas: np.ndarray
    values: np.ndarray
    std_errors: np.ndarray
    s: float
    weight: float


def pointwise_phase_space(ds: DisplacedCountDataset, s: float) -> PointwiseEstimate:
    """``P(alpha; s)`` at each measured displacement from count frequencies.

    ``P = 2/(pi(1-s)) sum_l w^l f_l`` with ``w = [eta(s-1)+2]/[eta(s-1)]``;
    the error follows from multinomial propagation through the weights.
    Values are densities per unit ``alpha`` area.
    """
    if s >= 1:
        raise ValueError("s must be < 1")
    eta = ds.eta
    w = (eta * (s - 1) + 2) / (eta * (s - 1))
    if abs(w) >= 1:
        warnings.warn(f"series weight |{w:.3g}| >= 1; result depends on the empirical support", SeriesRisk, stacklevel=2)
    pref = 2.0 / (math.pi * (1 - s))
    vals, errs = [], []
    for c in ds.counts:
        shots = c.sum()
        f = c / shots
        if ds.chopping_N is not None:
            f = invert_chopping(f, ds.chopping_N, min(ds.chopping_N, f.size - 1))
        g = w ** np.arange(f.size)
        mean = float(g @ f)
        second = float((g * g) @ f)
        vals.append(pref * mean)
        errs.append(pref * math.sqrt(max(second - mean * mean, 0.0) / shots))
    return PointwiseEstimate(ds.alphas.copy(), np.array(vals), np.array(errs), s, w)


# --------------------------------------------------------------------------
# moments


def _hermite_scale(n: int, m: int) -> float:
    return math.exp(gammaln(n + 1) + gammaln(m + 1) - gammaln(n + m + 1)) / 2 ** ((n + m) / 2)


def moments_sampling(data, n: int, m: int):
    """Normally ordered moment ``<a^dag^n a^m>`` from quadrature data.

    ``(1/N) sum_k exp(i(m-n) phi_k) < c H_{n+m}(sqrt(eta) x) > / eta^{(n+m)/2}``
    with ``c = n! m! / ((n+m)! 2^{(n+m)/2})``; exact for ``N >= n+m+1``
    equidistant phases.

    Returns ``(estimate, std_error)``.

    Raises
    ------
    PhaseDeficit
        If fewer than ``n + m + 1`` phases were measured.
    """
    N = _check_equidistant(data.phases)
    need = n + m + 1
    if N < need:
        raise PhaseDeficit(f"moment of order n+m={n + m} needs n+m+1 = {need} equidistant phases, got {N}")
    eta = _eta_of(data)
    c = _hermite_scale(n, m) / eta ** ((n + m) / 2)

    def funcs(x, k):
        return c * eval_hermite(n + m, math.sqrt(eta) * x) * np.exp(1j * (m - n) * data.phases[k])

    means, var, cnt = _per_phase_stats(data, funcs)
    est, err = _phase_sum(means, var, cnt, 1.0 / N)
    return complex(est), float(err)


def phase_moments_sampling(data, k: int, kernel: PhaseMomentKernel):
    """Exponential phase moment ``Psi_k`` from quadrature data.

    With phases on ``[0, pi)`` the full-circle kernel enters twice:
    ``Psi_k = (2 pi / N) sum_j exp(ik phi_j) < K_k(x) >_j``.

    Returns ``(estimate, std_error)``.

    Raises
    ------
    KernelTruncationTooLow
        If samples reach beyond the photon numbers resolved by the kernel.
    """
    if k == 0:
        return 1.0 + 0j, 0.0
    if kernel.k != k:
        raise ValueError("kernel order does not match k")
    N = _check_equidistant(data.phases)
    if isinstance(data, HomodyneDataset):
        xmax = max(float(np.max(np.abs(s))) for s in data.samples)
    else:
        xmax = float(np.max(np.abs(data.grid.x[np.any(data.values > 1e-12, axis=0)])))
    if 0.5 * xmax ** 2 > kernel.n_sum:
        raise KernelTruncationTooLow(f"samples reach x^2/2 = {0.5 * xmax ** 2:.1f} beyond n_sum = {kernel.n_sum}")

    def funcs(x, j):
        return 2.0 * kernel(x) * np.exp(1j * k * data.phases[j])

    means, var, cnt = _per_phase_stats(data, funcs)
    est, err = _phase_sum(means, var, cnt, math.pi / N)
    return complex(est), float(err)


# --------------------------------------------------------------------------
# endoscopy


def _group_frequencies(freqs: np.ndarray, tol: float):
    order = np.argsort(np.abs(freqs))
    groups, current = [], [int(order[0])]
    for i in order[1:]:
        if abs(abs(freqs[i]) - abs(freqs[current[-1]])) <= tol:
            current.append(int(i))
        else:
            groups.append(current)
            current = [int(i)]
    groups.append(current)
    return groups


def endoscopy_invert(
    signal: ProbeSignal,
    freqs,
    mode: str = "auto",
    kind: str = "cos",
    merge_degenerate: bool = False,
    freq_tol: float = 1e-9,
):
    """Coefficients ``c_n`` of ``signal(t) = sum_n c_n trig(Omega_n t)``.

    ``kind="cos"`` reads populations from an inversion signal; ``kind="sin"``
    reads the coefficients ``2 a_n`` of a difference signal. In projection
    mode ``c_n = (2/T) int_0^T signal trig(Omega_n t) dt`` divided by the
    self-overlap of the finite window; in linear mode the time samples are
    fitted by least squares. ``mode="auto"`` projects only when the window
    spans three periods of the smallest frequency gap.

    Returns ``(coefficients, report_dict)``.

    Raises
    ------
    DegenerateFrequencies
        If two frequencies coincide and ``merge_degenerate`` is false.
    """
    om = np.asarray(freqs, float)
    t, y = signal.times, signal.values
    T = float(t[-1] - t[0])
    groups = _group_frequencies(om, freq_tol)
    merged = [g for g in groups if len(g) > 1]
    if merged and not merge_degenerate:
        raise DegenerateFrequencies(f"degenerate frequency groups {merged}")
    reps = np.array([abs(om[g[0]]) for g in groups])
    signs = [np.sign(om[g]) if kind == "sin" else np.ones(len(g)) for g in groups]
    gaps = np.diff(np.sort(reps))
    min_gap = float(gaps.min()) if gaps.size else math.inf
    long_enough = T >= 3 * 2 * math.pi / min_gap
    if mode == "auto":
        mode = "projection" if long_enough else "linear"
        if not long_enough:
            warnings.warn(f"window {T:.3g} shorter than three beat periods; using the linear system", WindowTooShort, stacklevel=2)
    trig = np.cos if kind == "cos" else np.sin
    basis = trig(np.outer(t, reps))  # (T, G)
    diag = {"mode": mode, "window": T, "min_gap": min_gap, "unresolved_groups": merged}
    if mode == "projection":
        tw = np.gradient(t)
        tw[[0, -1]] *= 0.5
        tw = tw * (2.0 / T)
        proj = (basis * tw[:, None]).T @ y
        self_overlap = (basis * basis * tw[:, None]).sum(axis=0)
        coef_g = proj / np.where(self_overlap > 0, self_overlap, 1.0)
    elif mode == "linear":
        res = least_squares(LinearModel(basis), y)
        coef_g = res.estimate
        diag["condition"] = res.condition
    else:
        raise ValueError(f"unknown mode {mode!r}")
    coef = np.zeros(om.size)
    for g, sg, c in zip(groups, signs, coef_g):
        # a merged group is attributed to its first member; the split is unresolved
        coef[g[0]] = c * sg[0]
    return coef, diag


def collapse_time(freqs, populations) -> float:
    """``sqrt 2 / sigma_Omega`` for the population-weighted spread of frequencies."""
    om = np.asarray(freqs, float)
    p = np.asarray(populations, float)
    p = p / p.sum()
    mean = p @ om
    return math.sqrt(2.0) / math.sqrt(p @ (om - mean) ** 2)


# --------------------------------------------------------------------------
# systematic error of a finite phase set


def discretization_error_bound(rho_true: DensityMatrix, N: int, table: PatternTable) -> np.ndarray:
    """Aliasing error ``Delta rho_mn`` of sampling with ``N`` equidistant phases.

    ``sum_{j != 0} sum_{k - l = m - n + 2jN} (pi int f_mn psi_k psi_l dx) rho_kl``.
    """
    d = rho_true.dim
    if table.n_max < d - 1:
        raise ValueError("table too small for the state")
    x = table.grid.x
    tw = np.full(x.size, table.grid.dx)
    tw[[0, -1]] *= 0.5
    psi = hermite_functions(d - 1, x)
    g = psi[:, None, :] * psi[None, :, :]
    k, l = np.indices((d, d))
    out = np.zeros((d, d), complex)
    for m in range(d):
        for n in range(d):
            diff = (k - l) - (m - n)
            alias = (diff != 0) & (diff % (2 * N) == 0)
            if not np.any(alias):
                continue
            G = math.pi * (g @ (table.values[m, n] * tw))
            out[m, n] = np.sum(G[alias] * rho_true.elements[alias])
    return out
