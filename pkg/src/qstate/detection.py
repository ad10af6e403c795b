"""Measurement channels: photodetection loss, homodyne sampling, beam splitters,
displaced photon counting, photon chopping and two-level probe signals."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.linalg import expm, logm, solve_triangular
from scipy.special import gammaln
from scipy.stats import binom

from .errors import InstabilityWarning, InvalidSpec, TailTooHeavy, TruncationOverflow
from .states import (
    DEFAULT_GRID,
    DensityMatrix,
    Grid1D,
    QuadratureDistribution,
    TAIL_TOL,
    characteristic_function,
    coherent_amplitudes,
    displaced_number_statistics,
    laguerre_functions,
    quadrature_distribution,
)

SCALING = "dm_over_eta_sqrt2_alphaL"
CDF_POINTS = 4096


@dataclass(frozen=True)
class EfficiencyModel:
    eta: float

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise InvalidSpec(f"efficiency must lie in (0, 1], got {self.eta}")


def _check_eta(eta: float) -> float:
    return EfficiencyModel(float(eta)).eta


# --------------------------------------------------------------------------
# Bernoulli loss


def bernoulli_matrix(eta: float, n_max: int) -> np.ndarray:
    """``B[m, n] = C(n, m) eta^m (1-eta)^(n-m)``, shape ``(n_max+1, n_max+1)``."""
    n = np.arange(n_max + 1)
    return binom.pmf(n[:, None], n[None, :], eta)


def bernoulli_transform(p, eta: float) -> np.ndarray:
    """Photon-number distribution after detection with efficiency ``eta``."""
    p = np.asarray(p, float)
    _check_eta(eta)
    return bernoulli_matrix(eta, p.size - 1) @ p


def _inverse_bernoulli_matrix(eta: float, rows: int, cols: int) -> np.ndarray:
    # C(m, n) eta^-n (1 - 1/eta)^(m - n), the forward matrix with eta -> 1/eta
    out = np.zeros((rows, cols))
    base = 1.0 - 1.0 / eta
    for n in range(rows):
        for m in range(n, cols):
            out[n, m] = math.comb(m, n) * eta ** -n * base ** (m - n)
    return out


def inverse_bernoulli(P, eta: float, n_max: int) -> np.ndarray:
    """Undo Bernoulli loss by the alternating series with ``eta -> 1/eta``.

    Emits :class:`InstabilityWarning` when ``eta <= 0.5`` and the forward
    matrix has condition number above 1e8.
    """
    P = np.asarray(P, float)
    if eta <= 0:
        raise InvalidSpec("eta must be > 0")
    if eta <= 0.5:
        cond = np.linalg.cond(bernoulli_matrix(eta, P.size - 1))
        if cond > 1e8:
            warnings.warn(f"inverting loss at eta={eta}: condition number {cond:.2e}", InstabilityWarning, stacklevel=2)
    return _inverse_bernoulli_matrix(eta, n_max + 1, P.size) @ P


def _loss_kernel(rho: np.ndarray, t: float) -> np.ndarray:
    d = rho.shape[0]
    n = np.arange(d)
    out = np.zeros_like(rho)
    base = 1.0 - t
    scale = t ** (0.5 * (n[:, None] + n[None, :]))
    for k in range(d):
        if k and base == 0:
            break
        size = d - k
        m = n[:size]
        logc = 0.5 * (
            gammaln(m[:, None] + k + 1) - gammaln(m[:, None] + 1) + gammaln(m[None, :] + k + 1) - gammaln(m[None, :] + 1)
        ) - math.lgamma(k + 1)
        coef = np.exp(logc) * (base ** k)
        out[:size, :size] += coef * rho[k:, k:]
    return out * scale


def loss_map(rho: DensityMatrix, eta: float) -> DensityMatrix:
    """State after a beam-splitter loss channel of transmission ``eta``.

    ``rho_mn(eta) = eta^((m+n)/2) sum_k sqrt(C(m+k,m) C(n+k,n)) (1-eta)^k rho_{m+k,n+k}``.
    """
    _check_eta(eta)
    return DensityMatrix(_loss_kernel(rho.elements, eta), f"loss({eta})", rho.tail_weight)


def inverse_loss_map(rho_eta: DensityMatrix, eta: float) -> DensityMatrix:
    """Exact inverse of :func:`loss_map` on the truncated space."""
    if eta <= 0:
        raise InvalidSpec("eta must be > 0")
    if eta <= 0.5:
        d = rho_eta.dim
        tail = float(np.real(rho_eta.elements[-1, -1]))
        if tail > 1e-12:
            cond = np.linalg.cond(bernoulli_matrix(eta, d - 1))
            if cond > 1e8:
                warnings.warn(
                    f"inverse loss at eta={eta} on a state occupying the top layer: condition {cond:.2e}",
                    InstabilityWarning,
                    stacklevel=2,
                )
    return DensityMatrix(_loss_kernel(rho_eta.elements, 1.0 / eta), f"inverse_loss({eta})", rho_eta.tail_weight)


def smear_quadrature(dist: QuadratureDistribution, eta: float) -> QuadratureDistribution:
    """Convolve each phase slice with a Gaussian of variance ``(1-eta)/(2 eta)``.

    Done spectrally: the characteristic function is multiplied by
    ``exp[-(1/eta - 1) z^2 / 4]``.
    """
    _check_eta(eta)
    if eta == 1.0:
        return QuadratureDistribution(dist.phases, dist.grid, dist.values, dist.eta, dist.kind)
    g = dist.grid
    var = (1.0 - eta) / (2.0 * eta)
    spec = np.fft.rfft(dist.values, axis=1)
    z = 2 * math.pi * np.fft.rfftfreq(g.n_points, g.dx)
    vals = np.fft.irfft(spec * np.exp(-0.5 * var * z * z), g.n_points, axis=1)
    return QuadratureDistribution(dist.phases, g, vals, dist.eta * eta, dist.kind)


def smeared_distribution(rho: DensityMatrix, phases, grid: Grid1D = DEFAULT_GRID, eta: float = 1.0) -> QuadratureDistribution:
    """Exact ``p(x, phi; eta)`` from the lossy state: ``sqrt(eta) p_loss(sqrt(eta) x)``."""
    _check_eta(eta)
    lossy = loss_map(rho, eta) if eta < 1 else rho
    s = math.sqrt(eta)
    scaled = Grid1D(grid.x_min * s, grid.x_max * s, grid.n_points)
    base = quadrature_distribution(lossy, phases, scaled)
    return QuadratureDistribution(base.phases, grid, s * base.values, eta, "exact")


# --------------------------------------------------------------------------
# homodyne sampling


@dataclass(frozen=True, eq=False)
class HomodyneDataset:
    """Scaled difference-count samples per local-oscillator phase."""

    phases: np.ndarray
    samples: tuple
    eta: float = 1.0
    lo_photon_number: float = math.inf
    rng_seed: int = 0
    scaling: str = SCALING

    def __post_init__(self):
        ph = np.asarray(self.phases, float)
        if np.any(ph < 0) or np.any(ph >= 2 * math.pi):
            raise InvalidSpec("phases must lie in [0, 2 pi)")
        smp = tuple(np.asarray(s, float) for s in self.samples)
        if len(smp) != ph.size:
            raise InvalidSpec("one sample array per phase required")
        object.__setattr__(self, "phases", ph)
        object.__setattr__(self, "samples", smp)

    @property
    def counts(self) -> np.ndarray:
        return np.array([s.size for s in self.samples])

    def concatenated(self, other: "HomodyneDataset") -> "HomodyneDataset":
        if not np.array_equal(self.phases, other.phases) or self.eta != other.eta:
            raise InvalidSpec("datasets differ in phases or efficiency")
        smp = tuple(np.concatenate([a, b]) for a, b in zip(self.samples, other.samples))
        return HomodyneDataset(self.phases, smp, self.eta, self.lo_photon_number, self.rng_seed, self.scaling)


def equidistant_phases(n: int) -> np.ndarray:
    """``n`` equidistant phases ``k pi / n`` on the half circle."""
    return math.pi * np.arange(n) / n


def _sampling_grid(rho: DensityMatrix, eta: float) -> Grid1D:
    half = (math.sqrt(2 * rho.n_max + 1) + 6.0) / math.sqrt(eta)
    return Grid1D(-half, half, CDF_POINTS)


def _inverse_cdf_draw(rng, x: np.ndarray, pdf: np.ndarray, n: int) -> np.ndarray:
    pdf = np.clip(pdf, 0.0, None)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(x))])
    cdf /= cdf[-1]
    return np.interp(rng.random(n), cdf, x)


def sample_homodyne(
    rho: DensityMatrix,
    phases: Sequence[float],
    samples_per_phase: int,
    eta: float = 1.0,
    rng_seed: int = 0,
    lo_photon_number: float = math.inf,
) -> HomodyneDataset:
    """Draw i.i.d. quadrature samples per phase.

    With an infinite local oscillator the smeared density ``p(x, phi; eta)``
    is tabulated on 4096 points and inverted by linear interpolation of its
    CDF. A finite ``lo_photon_number`` draws the integer difference count
    from :func:`finite_lo_difference_statistics` and rescales it.
    Each phase uses the generator seeded by ``(rng_seed, phase index)``.
    """
    if samples_per_phase < 1:
        raise InvalidSpec("samples_per_phase must be >= 1")
    _check_eta(eta)
    phases = np.asarray(phases, float)
    out = []
    if math.isinf(lo_photon_number):
        grid = _sampling_grid(rho, eta)
        dist = smeared_distribution(rho, phases, grid, eta)
        for k in range(phases.size):
            rng = np.random.default_rng([rng_seed, k])
            out.append(_inverse_cdf_draw(rng, grid.x, dist.values[k], samples_per_phase))
    else:
        amp = math.sqrt(lo_photon_number)
        if amp <= 0:
            raise InvalidSpec("finite-LO sampling needs lo_photon_number > 0")
        for k, phi in enumerate(phases):
            rng = np.random.default_rng([rng_seed, k])
            dm, pr = finite_lo_difference_statistics(rho, amp * np.exp(1j * phi), eta)
            cdf = np.cumsum(pr)
            idx = np.searchsorted(cdf / cdf[-1], rng.random(samples_per_phase), side="right")
            out.append(dm[np.minimum(idx, dm.size - 1)] / (eta * math.sqrt(2) * amp))
    return HomodyneDataset(phases, tuple(out), eta, lo_photon_number, rng_seed)


# --------------------------------------------------------------------------
# beam splitter


def _block_ops(N: int):
    j = np.arange(N + 1)
    raise_ = np.zeros((N + 1, N + 1))
    # a1^dag a2 |j, N-j> = sqrt((j+1)(N-j)) |j+1, N-j-1>
    raise_[j[:-1] + 1, j[:-1]] = np.sqrt((j[:-1] + 1) * (N - j[:-1]))
    l2 = (raise_ - raise_.T) / 2j
    l3 = np.diag(j - N / 2.0)
    return raise_, l2, l3


def _check_two_mode(state2) -> np.ndarray:
    psi = np.asarray(state2, complex)
    if psi.ndim != 2:
        raise InvalidSpec("two-mode state must be a 2-D amplitude array psi[n1, n2]")
    d1, d2 = psi.shape
    n1, n2 = np.indices(psi.shape)
    top = min(d1, d2) - 1
    if np.any(np.abs(psi[n1 + n2 > top]) > 0):
        raise TruncationOverflow(f"amplitude with n1 + n2 > {top} cannot be held by the output truncation")
    return psi


def _apply_blocks(psi: np.ndarray, block) -> np.ndarray:
    d1, d2 = psi.shape
    out = np.zeros_like(psi)
    for N in range(min(d1, d2)):
        j = np.arange(N + 1)
        v = psi[j, N - j]
        out[j, N - j] = block(N) @ v
    return out


def beam_splitter_transform(state2, transmittance: float, phases: Sequence[float] = (0.0, 0.0, 0.0)) -> np.ndarray:
    """Apply the lossless beam splitter to a two-mode pure state.

    The Schroedinger-picture state transforms with ``V^dag`` where
    ``V = exp(-i a L3) exp(-i b L2) exp(-i g L3) exp(-i d N)``,
    ``cos^2(b/2) = transmittance`` and ``phases = (a, g, d)``.

    Parameters
    ----------
    state2 : array_like, shape (d, d)
        Amplitudes ``psi[n1, n2]``; only ``n1 + n2 < d`` may be occupied.

    Raises
    ------
    TruncationOverflow
    """
    if not 0 <= transmittance <= 1:
        raise InvalidSpec("transmittance must lie in [0, 1]")
    psi = _check_two_mode(state2)
    a, g, d = phases
    b = 2 * math.acos(math.sqrt(transmittance))

    def block(N):
        _, l2, l3 = _block_ops(N)
        m3 = np.diag(l3)
        v = np.diag(np.exp(-1j * a * m3)) @ expm(-1j * b * l2) @ np.diag(np.exp(-1j * g * m3))
        return (v * np.exp(-1j * d * N)).conj().T

    return _apply_blocks(psi, block)


def beam_splitter_matrix(transmittance: float, phases: Sequence[float] = (0.0, 0.0, 0.0)) -> np.ndarray:
    """Mode matrix ``U`` realized by :func:`beam_splitter_transform`.

    Columns are the output images of ``|1,0>`` and ``|0,1>``.
    """
    u1 = beam_splitter_transform(np.array([[0, 0], [1, 0]], complex), transmittance, phases)
    u2 = beam_splitter_transform(np.array([[0, 1], [0, 0]], complex), transmittance, phases)
    return np.array([[u1[1, 0], u2[1, 0]], [u1[0, 1], u2[0, 1]]])


def mode_transform(state2, U) -> np.ndarray:
    """Transform a two-mode pure state so that ``a_out = U a_in``.

    The block generator is ``sum_jk G_jk a_j^dag a_k`` with ``U = exp(i G)``.
    """
    psi = _check_two_mode(state2)
    U = np.asarray(U, complex)
    G = -1j * logm(U)

    def block(N):
        r, _, _ = _block_ops(N)
        j = np.arange(N + 1)
        gen = G[0, 0] * np.diag(j) + G[1, 1] * np.diag(N - j) + G[0, 1] * r + G[1, 0] * r.T
        return expm(1j * gen)

    return _apply_blocks(psi, block)


BALANCED_U = np.array([[1.0, 1.0], [-1.0, 1.0]]) / math.sqrt(2.0)


def _lo_cutoff(mean: float) -> int:
    return int(math.ceil(mean + 10 * math.sqrt(mean))) if mean > 0 else 0


def finite_lo_difference_statistics(rho: DensityMatrix, lo_alpha: complex, eta: float = 1.0):
    """Distribution of ``dm = m1 - m2`` behind a balanced splitter with a coherent LO.

    Signal enters port 1, the local oscillator ``|lo_alpha>`` port 2, and the
    mode matrix is ``[[1, 1], [-1, 1]]/sqrt(2)`` so that ``dm`` approaches
    ``eta sqrt(2) |lo_alpha| x(arg lo_alpha)``. Each output port is followed by
    Bernoulli loss.

    Returns
    -------
    dm : ndarray of int
    prob : ndarray
    """
    _check_eta(eta)
    mean = abs(lo_alpha) ** 2
    nl = _lo_cutoff(mean)
    lo = coherent_amplitudes(lo_alpha, nl)
    lo_tail = 1.0 - float(np.sum(np.abs(lo) ** 2))
    if lo_tail > TAIL_TOL:
        raise TailTooHeavy(lo_tail, TAIL_TOL, "local oscillator")
    lam, vec = np.linalg.eigh(rho.elements)
    ds = rho.dim
    d = ds + nl + 1
    joint = np.zeros((d, d))
    for w, c in zip(lam, vec.T):
        if w <= 1e-15:
            continue
        psi = np.zeros((d, d), complex)
        psi[:ds, : nl + 1] = np.outer(c, lo)
        out = mode_transform(psi, BALANCED_U)
        joint += w * np.abs(out) ** 2
    if eta < 1:
        B = bernoulli_matrix(eta, d - 1)
        joint = B @ joint @ B.T
    dm = np.arange(-(d - 1), d)
    prob = np.array([np.trace(joint, offset=-k) for k in dm])
    return dm, prob


def kolmogorov_distance_finite_lo(rho: DensityMatrix, lo_alpha: complex, eta: float) -> float:
    """Kolmogorov distance between scaled finite-LO statistics and ``p(x, phi; eta)``.

    The continuous law is binned onto the lattice ``dm * h`` with
    ``h = 1/(eta sqrt(2) |lo_alpha|)`` (bin edges halfway between lattice
    points), then cumulative sums are compared. With no local oscillator the
    negative and positive counts sit at minus and plus infinity.
    """
    dm, prob = finite_lo_difference_statistics(rho, lo_alpha, eta)
    phi = float(np.angle(lo_alpha))
    grid = Grid1D(-(math.sqrt(2 * rho.n_max + 1) + 8) / math.sqrt(eta), (math.sqrt(2 * rho.n_max + 1) + 8) / math.sqrt(eta), 20001)
    dens = smeared_distribution(rho, [phi], grid, eta).values[0]
    x = grid.x
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(x))])
    F = lambda t: np.interp(t, x, cdf, left=0.0, right=1.0)
    amp = abs(lo_alpha)
    if amp == 0:
        neg, zero, pos = prob[dm < 0].sum(), prob[dm == 0].sum(), prob[dm > 0].sum()
        f0 = float(F(0.0))
        return float(max(neg, abs(neg - f0), abs(neg + zero - f0), pos))
    h = 1.0 / (eta * math.sqrt(2.0) * amp)
    edges = (dm + 0.5) * h
    disc = np.cumsum(prob)
    return float(max(np.max(np.abs(disc - F(edges))), F((dm[0] - 0.5) * h)))


# --------------------------------------------------------------------------
# photon chopping


def _check_pow2(N: int):
    if N < 1 or (N & (N - 1)):
        raise InvalidSpec(f"chopping channel count must be a power of two, got {N}")


def chopping_matrix(N: int, n_max: int) -> np.ndarray:
    """Click statistics ``P[m, n]`` of ``n`` photons spread over ``N`` on/off detectors.

    ``P[m, n] = N^-n C(N, m) sum_i (-1)^i C(m, i) (m - i)^n`` evaluated in exact
    rational arithmetic.
    """
    _check_pow2(N)
    out = np.zeros((n_max + 1, n_max + 1))
    for n in range(n_max + 1):
        for m in range(min(n, N) + 1):
            s = sum((-1) ** i * math.comb(m, i) * (m - i) ** n for i in range(m + 1))
            out[m, n] = float(Fraction(math.comb(N, m) * s, N ** n))
    return out


def invert_chopping(clicks, N: int, n_max: int) -> np.ndarray:
    """Photon-number distribution from click statistics by back substitution.

    Requires ``n_max <= N`` so that the triangular matrix is invertible.
    """
    if n_max > N:
        raise InvalidSpec("inversion needs n_max <= N")
    c = np.zeros(n_max + 1)
    clicks = np.asarray(clicks, float)
    c[: min(clicks.size, n_max + 1)] = clicks[: n_max + 1]
    return solve_triangular(chopping_matrix(N, n_max), c, lower=False)


# --------------------------------------------------------------------------
# displaced photon counting


@dataclass(frozen=True, eq=False)
class DisplacedCountDataset:
    alphas: np.ndarray
    counts: tuple
    eta: float = 1.0
    chopping_N: int | None = None
    shots: int = 0
    rng_seed: int = 0

    def __post_init__(self):
        al = np.asarray(self.alphas, complex)
        cts = tuple(np.asarray(c, np.int64) for c in self.counts)
        if len(cts) != al.size:
            raise InvalidSpec("one count vector per displacement required")
        for c in cts:
            if np.any(c < 0) or (self.shots and c.sum() != self.shots):
                raise InvalidSpec("counts must be nonnegative and sum to shots")
        object.__setattr__(self, "alphas", al)
        object.__setattr__(self, "counts", cts)

    def frequencies(self) -> list:
        return [c / c.sum() for c in self.counts]


def _multinomial(rng, n: int, p: np.ndarray) -> np.ndarray:
    """Multinomial draw by sequential binomial conditioning."""
    p = np.clip(np.asarray(p, float), 0.0, None)
    p = p / p.sum()
    out = np.zeros(p.size, np.int64)
    left, mass = n, 1.0
    for i, pi in enumerate(p[:-1]):
        if left == 0:
            break
        q = min(1.0, pi / mass) if mass > 0 else 0.0
        out[i] = rng.binomial(left, q)
        left -= out[i]
        mass -= pi
    out[-1] += left
    return out


def displaced_count_probabilities(rho: DensityMatrix, alpha: complex, eta: float = 1.0, chopping_N: int | None = None) -> np.ndarray:
    """Expected count (or click) probabilities at one displacement."""
    p = bernoulli_transform(displaced_number_statistics(rho, alpha), eta)
    if chopping_N is not None:
        p = chopping_matrix(chopping_N, p.size - 1) @ p
        p = p[: min(chopping_N, p.size - 1) + 1]
    return p


def simulate_displaced_counts(
    rho: DensityMatrix,
    alphas: Sequence[complex],
    eta: float = 1.0,
    shots: int = 1000,
    chopping_N: int | None = None,
    rng_seed: int = 0,
) -> DisplacedCountDataset:
    """Multinomial photon (or click) counts at each displacement.

    Record ``i`` uses the generator seeded by ``(rng_seed, i)``.
    """
    if shots < 1:
        raise InvalidSpec("shots must be >= 1")
    _check_eta(eta)
    alphas = np.asarray(alphas, complex)
    counts = []
    for i, a in enumerate(alphas):
        p = displaced_count_probabilities(rho, a, eta, chopping_N)
        counts.append(_multinomial(np.random.default_rng([rng_seed, i]), shots, p))
    return DisplacedCountDataset(alphas, tuple(counts), eta, chopping_N, shots, rng_seed)


# --------------------------------------------------------------------------
# two-level probe signals


@dataclass(frozen=True, eq=False)
class ProbeConfig:
    """Probe parameters.

    ``Omega_L`` is the coupling rate (``2 kappa`` for the cavity model,
    ``eta_LD = 0``), ``k`` the sideband order, ``alpha`` an optional
    displacement applied before evolution, ``psi`` the preparation phase of
    the coherent probe and ``phi`` the laser phase difference of the
    quadrature probe.
    """

    times: np.ndarray
    Omega_L: float = 1.0
    k: int = 1
    eta_LD: float = 0.0
    alpha: complex | None = None
    psi: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.times, float)
        if t.ndim != 1 or np.any(t < 0) or np.any(np.diff(t) <= 0):
            raise InvalidSpec("time grid must be strictly increasing and nonnegative")
        if self.k < 0 or self.eta_LD < 0:
            raise InvalidSpec("k and eta_LD must be >= 0")
        object.__setattr__(self, "times", t)


@dataclass(frozen=True, eq=False)
class ProbeSignal:
    times: np.ndarray
    values: np.ndarray
    channel: str

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, float))
        object.__setattr__(self, "values", np.asarray(self.values, float))


def rabi_frequencies(k: int, eta_LD: float, n_max: int, Omega_L: float = 1.0) -> np.ndarray:
    """Rabi frequencies of the ``|n> <-> |n+k>`` sideband for ``n = 0 .. n_max``.

    For ``eta_LD = 0`` the cavity model gives ``Omega_L sqrt((n+1)...(n+k))``.
    Otherwise ``Omega_L exp(-eta^2/2) eta^k sqrt(n!/(n+k)!) L_n^k(eta^2)``,
    the modulus-carrying part of ``Omega_L <n| f_k(a^dag a) a^k |n+k>``.
    Values may be negative; the sign carries through to sine signals.
    """
    if k < 0 or eta_LD < 0:
        raise InvalidSpec("k and eta_LD must be >= 0")
    n = np.arange(n_max + 1)
    if eta_LD == 0:
        return Omega_L * np.exp(0.5 * (gammaln(n + k + 1) - gammaln(n + 1)))
    return Omega_L * laguerre_functions(k, n_max, eta_LD ** 2)


def _displaced(rho: DensityMatrix, alpha) -> DensityMatrix:
    if alpha is None or alpha == 0:
        return rho
    from .states import displacement_matrices

    extra = int(math.ceil((abs(alpha) + math.sqrt(rho.n_max)) ** 2 + 8 * (abs(alpha) + math.sqrt(rho.n_max)) + 12))
    D = displacement_matrices(-alpha, rho.dim + extra, rho.dim)
    big = D @ rho.elements @ D.conj().T  # D(-alpha) = D(alpha)^dag
    tail = 1.0 - float(np.real(np.trace(big)))
    if tail > TAIL_TOL:
        raise TailTooHeavy(tail, TAIL_TOL, "displaced probe state")
    return DensityMatrix(big, "displaced", tail)


def simulate_jc_inversion(rho: DensityMatrix, cfg: ProbeConfig) -> ProbeSignal:
    """``dP(t) = sum_n rho_nn cos(Omega_{n,n+k} t)`` after optional displacement."""
    r = _displaced(rho, cfg.alpha)
    om = rabi_frequencies(cfg.k, cfg.eta_LD, r.n_max, cfg.Omega_L)
    vals = np.cos(np.outer(cfg.times, om)) @ r.diag
    return ProbeSignal(cfg.times, vals, "inversion")


def pm_coefficients(rho: DensityMatrix, k: int, psi: float) -> np.ndarray:
    """``a_n = Im(exp(i psi) rho_{n, n+k})`` for ``n = 0 .. n_max - k``."""
    return np.imag(np.exp(1j * psi) * np.diagonal(rho.elements, offset=k))


def simulate_pm_difference(rho: DensityMatrix, cfg: ProbeConfig) -> ProbeSignal:
    """``P_e^-(t) - P_e^+(t) = 2 sum_n a_n sin(Omega_{n,n+k} t)``."""
    r = _displaced(rho, cfg.alpha)
    a = pm_coefficients(r, cfg.k, cfg.psi)
    om = rabi_frequencies(cfg.k, cfg.eta_LD, r.n_max, cfg.Omega_L)[: a.size]
    vals = 2.0 * np.sin(np.outer(cfg.times, om)) @ a
    return ProbeSignal(cfg.times, vals, f"pm_difference({cfg.psi!r})")


def simulate_quadrature_probe(rho: DensityMatrix, cfg: ProbeConfig):
    """Inversion signals that read out the quadrature characteristic function.

    Returns ``(incoherent, coherent)`` with ``incoherent = -Re Psi(z, phi)`` and
    ``coherent = -Im Psi(z, phi)`` at ``z = sqrt(2) Omega_L t``, so that
    ``Psi = -incoherent - i coherent``.
    """
    z = math.sqrt(2.0) * cfg.Omega_L * cfg.times
    psi = characteristic_function(rho, z, cfg.phi)
    return (
        ProbeSignal(cfg.times, -np.real(psi), "characteristic_re"),
        ProbeSignal(cfg.times, -np.imag(psi), "characteristic_im"),
    )
