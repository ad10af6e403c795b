"""Exact truncated Fock-space states and their representations.

Conventions
-----------
hbar = 1 and the quadrature at phase ``phi`` is
``x(phi) = (a exp(-i phi) + a^dag exp(i phi)) / sqrt(2)`` so that
``[x(phi), x(phi + pi/2)] = i`` and the vacuum variance is 1/2.
Phase-space functions use the complex amplitude ``alpha``; the ``"qp"``
convention rescales by ``alpha = (q + i p)/sqrt(2)`` and ``P(q, p) = P(alpha)/2``.

All special functions are evaluated with normalized three-term recurrences so
that no factorial ratio is ever formed explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import DimensionMismatch, InvalidSpec, SeriesDiverges, TailTooHeavy, DeconvolutionRefused

TAIL_TOL = 1e-8
_PI_QUARTER = math.pi ** -0.25


# --------------------------------------------------------------------------
# containers


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid of quadrature values, endpoints included."""

    x_min: float = -8.0
    x_max: float = 8.0
    n_points: int = 1024

    def __post_init__(self):
        if self.n_points < 2 or not self.x_max > self.x_min:
            raise ValueError("Grid1D needs n_points >= 2 and x_max > x_min")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_points)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "n_points": self.n_points}


DEFAULT_GRID = Grid1D(-8.0, 8.0, 1024)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Truncated Fock-basis density matrix.

    Construction does not enforce positivity or unit trace, because linear
    estimators may legitimately return indefinite matrices. Call
    :meth:`validate` where a physical state is required.

    Parameters
    ----------
    elements : array_like
        Square complex matrix indexed ``(m, n)``.
    label : str
        Free-text provenance.
    tail_weight : float
        Probability discarded by truncation before renormalization.
    """

    elements: np.ndarray
    label: str = ""
    tail_weight: float = 0.0

    def __post_init__(self):
        el = np.asarray(self.elements, dtype=complex)
        if el.ndim != 2 or el.shape[0] != el.shape[1]:
            raise InvalidSpec(f"density matrix must be square, got shape {el.shape}")
        object.__setattr__(self, "elements", _frozen(el))

    @property
    def dim(self) -> int:
        return self.elements.shape[0]

    @property
    def n_max(self) -> int:
        return self.dim - 1

    @property
    def diag(self) -> np.ndarray:
        return np.real(np.diag(self.elements)).copy()

    def check(self, hermitian_tol=1e-12, trace_tol=1e-12, positivity_tol=1e-10) -> list[str]:
        """Return a list of violated invariants (empty when valid)."""
        problems = []
        el = self.elements
        herm = np.max(np.abs(el - el.conj().T)) if el.size else 0.0
        if herm > hermitian_tol:
            problems.append(f"not Hermitian (max deviation {herm:.2e})")
        tr = np.trace(el)
        if abs(tr - 1.0) > trace_tol:
            problems.append(f"trace {tr.real:.12f} != 1")
        if positivity_tol is not None:
            lam = np.linalg.eigvalsh(0.5 * (el + el.conj().T)).min()
            if lam < -positivity_tol:
                problems.append(f"negative eigenvalue {lam:.2e}")
        return problems

    def validate(self, **tols) -> "DensityMatrix":
        problems = self.check(**tols)
        if problems:
            raise InvalidSpec("; ".join(problems))
        return self

    def hermitized(self) -> "DensityMatrix":
        el = self.elements
        return DensityMatrix(0.5 * (el + el.conj().T), self.label, self.tail_weight)

    def padded(self, dim: int) -> "DensityMatrix":
        """Embed into a larger truncation (zero-padded)."""
        if dim < self.dim:
            raise DimensionMismatch(f"cannot pad dim {self.dim} down to {dim}")
        out = np.zeros((dim, dim), complex)
        out[: self.dim, : self.dim] = self.elements
        return DensityMatrix(out, self.label, self.tail_weight)

    def to_dict(self) -> dict:
        el = self.elements
        return {
            "dim": self.dim,
            "label": self.label,
            "tail_weight": float(self.tail_weight),
            "elements": [[[float(v.real), float(v.imag)] for v in row] for row in el],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DensityMatrix":
        el = np.array(d["elements"], dtype=float)
        if el.ndim != 3 or el.shape[2] != 2:
            raise InvalidSpec("elements must be a matrix of [re, im] pairs")
        return cls(el[..., 0] + 1j * el[..., 1], d.get("label", ""), d.get("tail_weight", 0.0))


# --------------------------------------------------------------------------
# state specifications


@dataclass(frozen=True)
class Fock:
    n: int


@dataclass(frozen=True)
class Coherent:
    alpha: complex


@dataclass(frozen=True)
class SqueezedVacuum:
    """``S(xi)|0>`` with ``S(xi) = exp[(xi* a^2 - xi a^dag^2)/2]``.

    For real positive ``xi = r`` the ``x(0)`` variance is ``exp(-2 r)/2``.
    """

    xi: complex


@dataclass(frozen=True)
class Thermal:
    nbar: float


@dataclass(frozen=True)
class Cat:
    """``|alpha> + sign |-alpha>``, normalized."""

    alpha: complex
    sign: int = 1


@dataclass(frozen=True)
class Superposition:
    coefficients: tuple


@dataclass(frozen=True)
class Mixture:
    components: tuple  # of (weight, spec)


StateSpec = Union[Fock, Coherent, SqueezedVacuum, Thermal, Cat, Superposition, Mixture]


def _cplx(v) -> complex:
    if isinstance(v, (list, tuple)):
        return complex(v[0], v[1])
    if isinstance(v, dict):
        return complex(v.get("re", 0.0), v.get("im", 0.0))
    return complex(v)


def spec_from_dict(d: dict) -> StateSpec:
    """Parse ``{"kind": ..., "params": {...}}`` into a state specification.

    Complex numbers may be given as ``[re, im]``, ``{"re", "im"}`` or a real.
    """
    try:
        kind = d["kind"].lower()
        p = d.get("params", {})
        if kind == "fock":
            return Fock(int(p["n"]))
        if kind == "coherent":
            return Coherent(_cplx(p["alpha"]))
        if kind in ("squeezed", "squeezedvacuum", "squeezed_vacuum"):
            return SqueezedVacuum(_cplx(p["xi"]))
        if kind == "thermal":
            return Thermal(float(p["nbar"]))
        if kind == "cat":
            return Cat(_cplx(p["alpha"]), int(p.get("sign", 1)))
        if kind == "superposition":
            return Superposition(tuple(_cplx(c) for c in p["coefficients"]))
        if kind == "mixture":
            comps = tuple((float(c["weight"]), spec_from_dict(c["state"])) for c in p["components"])
            return Mixture(comps)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidSpec(f"malformed state spec: {exc!r}") from exc
    raise InvalidSpec(f"unknown state kind {d.get('kind')!r}")


def _cjson(z: complex) -> list:
    return [float(z.real), float(z.imag)]


def spec_to_dict(spec: StateSpec) -> dict:
    if isinstance(spec, Fock):
        return {"kind": "fock", "params": {"n": spec.n}}
    if isinstance(spec, Coherent):
        return {"kind": "coherent", "params": {"alpha": _cjson(spec.alpha)}}
    if isinstance(spec, SqueezedVacuum):
        return {"kind": "squeezed_vacuum", "params": {"xi": _cjson(spec.xi)}}
    if isinstance(spec, Thermal):
        return {"kind": "thermal", "params": {"nbar": spec.nbar}}
    if isinstance(spec, Cat):
        return {"kind": "cat", "params": {"alpha": _cjson(spec.alpha), "sign": spec.sign}}
    if isinstance(spec, Superposition):
        return {"kind": "superposition", "params": {"coefficients": [_cjson(c) for c in spec.coefficients]}}
    if isinstance(spec, Mixture):
        return {
            "kind": "mixture",
            "params": {"components": [{"weight": w, "state": spec_to_dict(s)} for w, s in spec.components]},
        }
    raise InvalidSpec(f"unknown spec {spec!r}")


def coherent_amplitudes(alpha: complex, n_max: int) -> np.ndarray:
    """Fock amplitudes of ``|alpha>`` for ``n <= n_max`` (not renormalized)."""
    c = np.empty(n_max + 1, complex)
    c[0] = math.exp(-0.5 * abs(alpha) ** 2)
    for n in range(n_max):
        c[n + 1] = c[n] * alpha / math.sqrt(n + 1)
    return c


def _squeezed_amplitudes(xi: complex, n_max: int) -> np.ndarray:
    r, theta = abs(xi), np.angle(xi)
    c = np.zeros(n_max + 1, complex)
    c[0] = 1.0 / math.sqrt(math.cosh(r))
    ratio = -np.exp(1j * theta) * math.tanh(r)
    for n in range(0, n_max - 1, 2):
        c[n + 2] = c[n] * ratio * math.sqrt((n + 1) / (n + 2))
    return c


def _pure_amplitudes(spec, n_ext: int) -> np.ndarray:
    if isinstance(spec, Fock):
        c = np.zeros(n_ext + 1, complex)
        c[spec.n] = 1.0
        return c
    if isinstance(spec, Coherent):
        return coherent_amplitudes(spec.alpha, n_ext)
    if isinstance(spec, SqueezedVacuum):
        return _squeezed_amplitudes(spec.xi, n_ext)
    if isinstance(spec, Cat):
        if spec.sign not in (1, -1):
            raise InvalidSpec("cat parity sign must be +1 or -1")
        c = coherent_amplitudes(spec.alpha, n_ext)
        c = c * (1 + spec.sign * (-1.0) ** np.arange(n_ext + 1))
        if not np.any(np.abs(c) > 0):
            raise InvalidSpec("odd cat of zero amplitude is not normalizable")
        return c
    raise InvalidSpec(f"not a pure-state spec: {spec!r}")


def _extension(spec, n_max: int) -> int:
    if isinstance(spec, (Coherent, Cat)):
        a = abs(spec.alpha)
        return max(n_max, int(a * a + 20 * a + 60)) + 60
    if isinstance(spec, SqueezedVacuum):
        t = math.tanh(abs(spec.xi))
        extra = 60 if t == 0 else int(min(4000, 60 + 40 / max(-math.log(t * t), 1e-3)))
        return n_max + extra
    return n_max


def build_state(spec: StateSpec, n_max: int, tail_tol: float = TAIL_TOL) -> DensityMatrix:
    """Build the truncated density matrix of ``spec``.

    Parameters
    ----------
    spec : StateSpec
    n_max : int
        Largest retained photon number.
    tail_tol : float
        Largest probability that truncation may discard.

    Returns
    -------
    DensityMatrix
        Renormalized after truncation; ``tail_weight`` records the loss.

    Raises
    ------
    TailTooHeavy
        If truncation discards more than ``tail_tol``.
    InvalidSpec
        For malformed coefficients or weights.
    """
    if n_max < 0:
        raise InvalidSpec("n_max must be >= 0")
    label = repr(spec)
    if isinstance(spec, Thermal):
        if spec.nbar < 0:
            raise InvalidSpec("thermal mean photon number must be >= 0")
        q = spec.nbar / (1.0 + spec.nbar)
        p = (1 - q) * q ** np.arange(n_max + 1)
        tail = q ** (n_max + 1)
        if tail > tail_tol:
            raise TailTooHeavy(tail, tail_tol, "thermal")
        rho = np.diag(p / p.sum()).astype(complex)
        return DensityMatrix(rho, label, tail).validate()
    if isinstance(spec, Superposition):
        c = np.asarray(spec.coefficients, complex)
        norm = np.sum(np.abs(c) ** 2)
        if c.size == 0 or abs(norm - 1.0) > 1e-12:
            raise InvalidSpec(f"superposition coefficients have norm^2 {norm!r}, expected 1")
        tail = float(np.sum(np.abs(c[n_max + 1 :]) ** 2))
        if tail > tail_tol:
            raise TailTooHeavy(tail, tail_tol, "superposition")
        c = np.pad(c[: n_max + 1], (0, max(0, n_max + 1 - c.size)))
        c = c / np.linalg.norm(c)
        return DensityMatrix(np.outer(c, c.conj()), label, tail).validate()
    if isinstance(spec, Mixture):
        w = np.array([wc for wc, _ in spec.components], float)
        if w.size == 0 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidSpec("mixture weights must be nonnegative and sum to 1")
        rho = np.zeros((n_max + 1, n_max + 1), complex)
        tail = 0.0
        for wi, (_, sub) in zip(w, spec.components):
            part = build_state(sub, n_max, tail_tol)
            rho += wi * part.elements
            tail += wi * part.tail_weight
        return DensityMatrix(rho / np.trace(rho).real, label, tail).validate()
    if isinstance(spec, Fock) and not 0 <= spec.n:
        raise InvalidSpec("Fock index must be >= 0")
    if isinstance(spec, Fock) and spec.n > n_max:
        raise TailTooHeavy(1.0, tail_tol, "fock")
    n_ext = _extension(spec, n_max)
    c = _pure_amplitudes(spec, n_ext)
    w = np.abs(c) ** 2
    tail = float(np.sum(w[n_max + 1 :]) / np.sum(w))
    if tail > tail_tol:
        raise TailTooHeavy(tail, tail_tol, type(spec).__name__)
    c = c[: n_max + 1]
    c = c / np.linalg.norm(c)
    return DensityMatrix(np.outer(c, c.conj()), label, tail).validate()


# --------------------------------------------------------------------------
# special functions


def hermite_functions(n_max: int, x) -> np.ndarray:
    """Normalized oscillator eigenfunctions ``psi_0 .. psi_{n_max}`` at ``x``.

    Uses ``psi_{n+1} = sqrt(2/(n+1)) x psi_n - sqrt(n/(n+1)) psi_{n-1}``.

    Returns
    -------
    ndarray, shape ``(n_max + 1,) + x.shape``
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((n_max + 1,) + x.shape)
    out[0] = _PI_QUARTER * np.exp(-0.5 * x * x)
    if n_max >= 1:
        out[1] = math.sqrt(2.0) * x * out[0]
    for n in range(1, n_max):
        out[n + 1] = math.sqrt(2.0 / (n + 1)) * x * out[n] - math.sqrt(n / (n + 1)) * out[n - 1]
    return out


def oscillator_eigenfunction(n: int, x):
    """Value of ``psi_n(x) = pi^(-1/4) exp(-x^2/2) H_n(x) / sqrt(2^n n!)``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    return hermite_functions(n, x)[n]


def hermite_function_derivatives(psi: np.ndarray, x) -> np.ndarray:
    """``psi_n'`` from the ladder identity ``sqrt(n/2) psi_{n-1} - sqrt((n+1)/2) psi_{n+1}``.

    ``psi`` must hold one row more than the derivatives wanted.
    """
    n_top = psi.shape[0] - 2
    d = np.empty_like(psi[: n_top + 1])
    for n in range(n_top + 1):
        d[n] = -math.sqrt((n + 1) / 2.0) * psi[n + 1]
        if n:
            d[n] += math.sqrt(n / 2.0) * psi[n - 1]
    return d


def laguerre_functions(k: int, n_max: int, u) -> np.ndarray:
    """Normalized associated Laguerre functions.

    ``l_n^k(u) = sqrt(n!/(n+k)!) u^(k/2) exp(-u/2) L_n^k(u)`` for
    ``n = 0 .. n_max``, computed by the orthonormal upward recurrence.
    """
    u = np.asarray(u, dtype=float)
    out = np.empty((n_max + 1,) + u.shape)
    with np.errstate(divide="ignore"):
        logu = np.log(u)
    if k == 0:
        out[0] = np.exp(-0.5 * u)
    else:
        out[0] = np.where(u > 0, np.exp(0.5 * k * logu - 0.5 * u - 0.5 * math.lgamma(k + 1)), 0.0)
    if n_max >= 1:
        out[1] = (1 + k - u) * out[0] / math.sqrt(1 + k)
    for n in range(1, n_max):
        out[n + 1] = ((2 * n + 1 + k - u) * out[n] - math.sqrt(n * (n + k)) * out[n - 1]) / math.sqrt(
            (n + 1) * (n + k + 1)
        )
    return out


def displacement_matrices(alphas, rows: int, cols: int | None = None) -> np.ndarray:
    """Exact matrix elements ``<m|D(alpha)|n>`` for ``m < rows``, ``n < cols``.

    Parameters
    ----------
    alphas : complex or array of complex
    rows, cols : int

    Returns
    -------
    ndarray, shape ``alphas.shape + (rows, cols)``
    """
    cols = rows if cols is None else cols
    a = np.asarray(alphas, dtype=complex)
    flat = a.reshape(-1)
    u = np.abs(flat) ** 2
    ph = np.exp(1j * np.angle(flat))
    low = min(rows, cols) - 1
    top = max(rows, cols) - 1
    out = np.zeros((flat.size, rows, cols), complex)
    for k in range(top + 1):
        ell = laguerre_functions(k, low, u)  # (low+1, P)
        if k == 0:
            idx = np.arange(low + 1)
            out[:, idx, idx] = ell.T
            continue
        # below diagonal: m = n + k, value e^{ik theta} l_n^k
        nb = min(rows - k, cols)
        if nb > 0:
            n = np.arange(nb)
            out[:, n + k, n] = (ell[:nb] * ph ** k).T
        # above diagonal: n = m + k, value (-e^{-i theta})^k l_m^k
        na = min(cols - k, rows)
        if na > 0:
            m = np.arange(na)
            out[:, m, m + k] = (ell[:na] * (-np.conj(ph)) ** k).T
    return out.reshape(a.shape + (rows, cols))


def displaced_fock_overlap(m: int, n: int, alpha: complex) -> complex:
    """``<m|n, alpha> = <m|D(alpha)|n>``."""
    if m < 0 or n < 0:
        raise ValueError("indices must be >= 0")
    return complex(displacement_matrices(alpha, m + 1, n + 1)[m, n])


# --------------------------------------------------------------------------
# quadrature distributions


@dataclass(frozen=True, eq=False)
class QuadratureDistribution:
    """``p(x, phi)`` tabulated on phases x grid.

    ``values`` has shape ``(len(phases), grid.n_points)``.
    """

    phases: np.ndarray
    grid: Grid1D
    values: np.ndarray
    eta: float = 1.0
    kind: str = "exact"

    def __post_init__(self):
        object.__setattr__(self, "phases", _frozen(np.asarray(self.phases, float)))
        object.__setattr__(self, "values", _frozen(np.asarray(self.values, float)))
        if self.values.shape != (self.phases.size, self.grid.n_points):
            raise DimensionMismatch("values must have shape (n_phases, n_points)")


def quadrature_distribution(rho: DensityMatrix, phases: Sequence[float], grid: Grid1D = DEFAULT_GRID) -> QuadratureDistribution:
    """Exact ``p(x, phi) = sum_mn psi_m psi_n exp(-i(m-n)phi) rho_mn``."""
    phases = np.atleast_1d(np.asarray(phases, float))
    psi = hermite_functions(rho.n_max, grid.x)  # (d, X)
    n = np.arange(rho.dim)
    vals = np.empty((phases.size, grid.n_points))
    for i, phi in enumerate(phases):
        u = psi * np.exp(1j * n * phi)[:, None]
        vals[i] = np.real(np.einsum("mx,mn,nx->x", u.conj(), rho.elements, u))
    return QuadratureDistribution(phases, grid, vals, 1.0, "exact")


def characteristic_function(rho: DensityMatrix, z, phi):
    """``Psi(z, phi) = Tr[rho exp(i z x(phi))]`` via exact displacement elements.

    ``exp(i z x(phi)) = D(beta)`` with ``beta = i z exp(i phi)/sqrt(2)``.
    Broadcasts over ``z`` and ``phi``.
    """
    z, phi = np.broadcast_arrays(np.asarray(z, float), np.asarray(phi, float))
    beta = 1j * z * np.exp(1j * phi) / math.sqrt(2.0)
    D = displacement_matrices(beta, rho.dim)
    val = np.einsum("mn,...nm->...", rho.elements, D)
    return complex(val) if val.ndim == 0 else val


# --------------------------------------------------------------------------
# phase space


@dataclass(frozen=True, eq=False)
class PhaseSpaceGrid:
    """Rectangular phase-space grid.

    ``values[i, j]`` sits at ``(a[i], b[j])`` where ``(a, b)`` is
    ``(Re alpha, Im alpha)`` for ``convention="alpha"`` and ``(q, p)`` for
    ``convention="qp"``.
    """

    a: np.ndarray
    b: np.ndarray
    values: np.ndarray | None = None
    s: float = 0.0
    convention: str = "alpha"

    def __post_init__(self):
        if self.convention not in ("alpha", "qp"):
            raise ValueError("convention must be 'alpha' or 'qp'")
        object.__setattr__(self, "a", _frozen(np.asarray(self.a, float)))
        object.__setattr__(self, "b", _frozen(np.asarray(self.b, float)))
        if self.values is not None:
            v = np.asarray(self.values, float)
            if v.shape != (self.a.size, self.b.size):
                raise DimensionMismatch("values must have shape (len(a), len(b))")
            object.__setattr__(self, "values", _frozen(v))

    @property
    def alphas(self) -> np.ndarray:
        A, B = np.meshgrid(self.a, self.b, indexing="ij")
        z = A + 1j * B
        return z / math.sqrt(2.0) if self.convention == "qp" else z

    @property
    def jacobian(self) -> float:
        """Factor turning a density per unit alpha-area into this convention."""
        return 0.5 if self.convention == "qp" else 1.0

    def with_values(self, values, s=None) -> "PhaseSpaceGrid":
        return PhaseSpaceGrid(self.a, self.b, values, self.s if s is None else s, self.convention)

    def integral(self) -> float:
        return float(np.trapezoid(np.trapezoid(self.values, self.b, axis=1), self.a))


def _displaced_stats_batch(rho: DensityMatrix, alphas: np.ndarray, cols: int) -> np.ndarray:
    out = np.empty((alphas.size, cols))
    flat = alphas.reshape(-1)
    for start in range(0, flat.size, 128):
        D = displacement_matrices(flat[start : start + 128], rho.dim, cols)
        out[start : start + 128] = np.real(np.einsum("pkm,kn,pnm->pm", D.conj(), rho.elements, D))
    return out.reshape(alphas.shape + (cols,))


def _stats_cutoff(n_max: int, amax: float) -> int:
    r = math.sqrt(n_max) + amax
    return int(math.ceil(r * r + 8 * r + 12))


def displaced_number_statistics(rho: DensityMatrix, alpha: complex, m_max: int | None = None) -> np.ndarray:
    """``p_m(alpha) = <m|D^dag(alpha) rho D(alpha)|m>``.

    Parameters
    ----------
    rho : DensityMatrix
    alpha : complex
    m_max : int, optional
        Largest photon number returned. Chosen automatically when omitted.

    Raises
    ------
    TailTooHeavy
        If the returned vector misses more than 1e-8 probability.
    """
    cols = (m_max if m_max is not None else _stats_cutoff(rho.n_max, abs(alpha))) + 1
    p = _displaced_stats_batch(rho, np.asarray([alpha], complex), cols)[0]
    tail = float(np.real(np.trace(rho.elements))) - p.sum()
    if tail > TAIL_TOL:
        raise TailTooHeavy(tail, TAIL_TOL, "displaced statistics")
    return p


def series_weight(s: float) -> float:
    return (s + 1.0) / (s - 1.0)


def phase_space_function(rho: DensityMatrix, s: float, grid: PhaseSpaceGrid) -> PhaseSpaceGrid:
    """s-parametrized phase-space function from displaced statistics.

    ``P(alpha; s) = 2/(pi (1-s)) sum_m ((s+1)/(s-1))^m p_m(alpha)``; ``s = 0``
    gives the Wigner function, ``s = -1`` the Q function.

    Raises
    ------
    SeriesDiverges
        For ``s > 0``, where the weights grow geometrically.
    """
    if s >= 1:
        raise SeriesDiverges("s must be < 1")
    w = series_weight(s)
    if abs(w) > 1.0:
        raise SeriesDiverges(f"weights |{w:.3g}|^m grow for s = {s}")
    alphas = grid.alphas
    if s == 0:
        # D(a) (-1)^N D(a)^dag = D(2a) (-1)^N keeps the sum inside the truncation
        sign = (-1.0) ** np.arange(rho.dim)
        vals = np.empty(alphas.shape)
        flat = alphas.reshape(-1)
        out = vals.reshape(-1)
        for start in range(0, flat.size, 512):
            D = displacement_matrices(2 * flat[start : start + 512], rho.dim)
            out[start : start + 512] = np.real(np.einsum("mn,pnm,m->p", rho.elements, D, sign))
        return PhaseSpaceGrid(grid.a, grid.b, 2.0 / math.pi * vals * grid.jacobian, s, grid.convention)
    if s == -1:
        # only p_0(alpha) = <alpha|rho|alpha> survives
        flat = alphas.reshape(-1)
        amp = np.empty((rho.dim, flat.size), complex)
        amp[0] = np.exp(-0.5 * np.abs(flat) ** 2)
        for n in range(1, rho.dim):
            amp[n] = amp[n - 1] * flat / math.sqrt(n)
        vals = np.real(np.einsum("mp,mn,np->p", amp.conj(), rho.elements, amp)).reshape(alphas.shape)
        return PhaseSpaceGrid(grid.a, grid.b, vals / math.pi * grid.jacobian, s, grid.convention)
    cols =_stats_cutoff(rho.n_max, float(np.abs(alphas).max()) if alphas.size else 0.0) + 1
    p = _displaced_stats_batch(rho, alphas, cols)
    weights = w ** np.arange(cols)
    vals = 2.0 / (math.pi * (1.0 - s)) * (p @ weights)
    return PhaseSpaceGrid(grid.a, grid.b, vals * grid.jacobian, s, grid.convention)


def _gauss_matrix(axis: np.ndarray, var: float) -> np.ndarray:
    d = axis[:, None] - axis[None, :]
    step = axis[1] - axis[0]
    return np.exp(-0.5 * d * d / var) / math.sqrt(2 * math.pi * var) * step


def convert_ordering(grid_in: PhaseSpaceGrid, s_target: float) -> PhaseSpaceGrid:
    """Lower the ordering parameter by Gaussian convolution.

    The kernel has variance ``(s_in - s_target)/4`` per component of alpha,
    i.e. ``(s_in - s_target)/2`` per component in the ``qp`` convention.

    Raises
    ------
    DeconvolutionRefused
        If ``s_target > s_in``.
    """
    ds = grid_in.s - s_target
    if ds < 0:
        raise DeconvolutionRefused(f"s_target {s_target} above s_in {grid_in.s}")
    if ds == 0:
        return grid_in
    var = ds / 4.0 if grid_in.convention == "alpha" else ds / 2.0
    ga = _gauss_matrix(grid_in.a, var)
    gb = _gauss_matrix(grid_in.b, var)
    vals = ga @ grid_in.values @ gb.T
    return grid_in.with_values(vals, s_target)


def positive_p(rho: DensityMatrix, alpha: complex, alpha_prime: complex) -> float:
    """Positive P function ``exp(-|alpha - alpha'*|^2/4) <beta|rho|beta> / (4 pi^2)``.

    ``beta = (alpha + alpha'*)/2``; ``<beta|rho|beta>`` uses exact coherent
    amplitudes restricted to the truncation.
    """
    beta = 0.5 * (alpha + np.conj(alpha_prime))
    c = coherent_amplitudes(beta, rho.n_max)
    q = float(np.real(c.conj() @ rho.elements @ c))
    return math.exp(-0.25 * abs(alpha - np.conj(alpha_prime)) ** 2) * q / (4 * math.pi ** 2)


def exponential_phase_moments(rho: DensityMatrix, k: int) -> complex:
    """``Psi_k = sum_n rho_{n+k, n}``."""
    if k < 0:
        raise ValueError("k must be >= 0")
    return complex(np.sum(np.diagonal(rho.elements, offset=-k)))


# --------------------------------------------------------------------------
# comparisons


def _psd_sqrt_factor(a: np.ndarray, cut: float = 1e-14):
    lam, v = np.linalg.eigh(0.5 * (a + a.conj().T))
    keep = lam > cut
    return v[:, keep] * np.sqrt(lam[keep])


def fidelity(a: DensityMatrix, b: DensityMatrix) -> float:
    """Uhlmann fidelity ``(Tr |sqrt(a) sqrt(b)|)^2``.

    The square root of the lower-rank argument is formed on its support only,
    which keeps near-pure comparisons free of square-root noise.
    """
    if a.dim != b.dim:
        raise DimensionMismatch(f"dimensions {a.dim} and {b.dim} differ")
    ea, eb = a.elements, b.elements
    fa, fb = _psd_sqrt_factor(ea), _psd_sqrt_factor(eb)
    if fb.shape[1] < fa.shape[1]:
        fa, ea, eb = fb, eb, ea
    m = fa.conj().T @ eb @ fa
    lam = np.clip(np.linalg.eigvalsh(0.5 * (m + m.conj().T)), 0.0, None)
    return float(min(1.0, np.sum(np.sqrt(lam)) ** 2))


def trace_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    if a.dim != b.dim:
        raise DimensionMismatch(f"dimensions {a.dim} and {b.dim} differ")
    d = a.elements - b.elements
    return float(min(1.0, 0.5 * np.sum(np.abs(np.linalg.eigvalsh(0.5 * (d + d.conj().T))))))


def compare_states(a: DensityMatrix, b: DensityMatrix) -> dict:
    """Fidelity and trace distance between two states of equal dimension."""
    return {"fidelity": fidelity(a, b), "trace_distance": trace_distance(a, b)}


def von_neumann_entropy(rho: DensityMatrix) -> float:
    lam = np.linalg.eigvalsh(rho.elements)
    lam = lam[lam > 1e-300]
    return float(-np.sum(lam * np.log(lam)))
