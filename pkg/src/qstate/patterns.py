"""Pattern functions and the sampling kernels built from them.

A pattern function ``f_mn(x)`` turns quadrature data into density-matrix
elements: ``rho_mn = int_0^pi dphi int dx f_mn(x) exp(i(m-n)phi) p(x, phi)``.
Two independent constructions are provided:

* the product route ``f_mn = d/dx [psi_m phi_n]`` (``m <= n``) with the
  irregular oscillator solution ``phi_n`` integrated as an ODE, and
* the Fourier route ``f_mn(x) = (1/pi) int_0^inf dz z T(zx) l_m^{n-m}(z^2/2)``
  which also carries the loss-compensating factor ``exp[(1/eta - 1) z^2/4]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import bernoulli, comb, erf, exp1, gamma, gammaincc

from .errors import EtaOutOfRange, GridTooNarrow, NotConverged
from .states import DEFAULT_GRID, Grid1D, hermite_function_derivatives, hermite_functions, laguerre_functions

WRONSKIAN = 2.0 / math.pi
METHOD_VERSION = "1"


@dataclass(frozen=True, eq=False)
class PatternTable:
    """Real sampling functions ``values[m, n, x_index]``, symmetric in ``(m, n)``."""

    grid: Grid1D
    n_max: int
    values: np.ndarray
    eta: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def f(self, m: int, n: int) -> np.ndarray:
        return self.values[m, n]


# --------------------------------------------------------------------------
# product route


def _check_span(n: int, grid: Grid1D):
    need = math.sqrt(2 * n + 1) + 3.0
    if grid.x_min > -need or grid.x_max < need:
        raise GridTooNarrow(f"index {n} needs the grid to cover [-{need:.2f}, {need:.2f}]")


def _irregular(n: int, x: np.ndarray):
    """Irregular solution and derivative with Wronskian 2/pi and opposite parity."""
    psi = hermite_functions(n + 1, 0.0)
    dpsi0 = hermite_function_derivatives(psi, 0.0)[n]
    if n % 2 == 0:
        y0 = [0.0, WRONSKIAN / psi[n]]
    else:
        y0 = [-WRONSKIAN / dpsi0, 0.0]
    ax = np.abs(x)
    t_eval = np.unique(ax)
    e = 2 * n + 1

    def rhs(t, y):
        return [y[1], (t * t - e) * y[0]]

    if t_eval[-1] > 0:
        sol = solve_ivp(rhs, (0.0, t_eval[-1]), y0, method="DOP853", t_eval=t_eval, rtol=1e-13, atol=1e-14)
        if not sol.success:  # pragma: no cover - solver failure is not expected on finite grids
            raise RuntimeError(sol.message)
        phi_abs, dphi_abs = sol.y
    else:
        phi_abs, dphi_abs = np.array([y0[0]]), np.array([y0[1]])
    idx = np.searchsorted(t_eval, ax)
    phi, dphi = phi_abs[idx], dphi_abs[idx]
    # parity of phi_n is (-1)^(n+1); its derivative has parity (-1)^n
    neg = x < 0
    sgn = (-1.0) ** (n + 1)
    phi = np.where(neg, sgn * phi, phi)
    dphi = np.where(neg, -sgn * dphi, dphi)
    return phi, dphi


def regular_irregular_pair(n: int, grid: Grid1D = DEFAULT_GRID, derivatives: bool = False):
    """Regular and irregular oscillator solutions at energy ``n + 1/2``.

    The irregular solution obeys ``psi phi' - psi' phi = 2/pi`` and has the
    parity opposite to ``psi_n`` (``phi_n(0) = 0`` for even ``n``,
    ``phi_n'(0) = 0`` for odd ``n``). It is integrated outward from the
    origin with an 8th-order Runge-Kutta scheme.

    Returns
    -------
    (psi, phi) or (psi, phi, dpsi, dphi) when ``derivatives`` is set.

    Raises
    ------
    GridTooNarrow
        If the grid does not extend 3 units past both turning points.
    """
    _check_span(n, grid)
    x = grid.x
    psi_all = hermite_functions(n + 1, x)
    psi = psi_all[n]
    phi, dphi = _irregular(n, x)
    if not derivatives:
        return psi, phi
    dpsi = hermite_function_derivatives(psi_all, x)[n]
    return psi, phi, dpsi, dphi


def _stencil_derivative(y: np.ndarray, h: float) -> np.ndarray:
    d = np.gradient(y, h, edge_order=2)
    c = np.array([-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0]) / (60.0 * h)
    if y.size >= 7:
        d[3:-3] = np.convolve(y, c[::-1], mode="valid")
    return d


def pattern_function_table(n_max: int, grid: Grid1D = DEFAULT_GRID, method: str = "analytic") -> PatternTable:
    """Pattern functions ``f_mn = d/dx[psi_m phi_n]`` for ``m <= n <= n_max``.

    Parameters
    ----------
    method : {"analytic", "stencil"}
        ``"analytic"`` applies the product rule with exact ladder derivatives
        of ``psi_m`` and the ODE derivative of ``phi_n``; ``"stencil"``
        differentiates the product with a 7-point centred stencil.

    Raises
    ------
    GridTooNarrow
    """
    _check_span(n_max, grid)
    x = grid.x
    psi = hermite_functions(n_max + 1, x)
    dpsi = hermite_function_derivatives(psi, x)
    vals = np.empty((n_max + 1, n_max + 1, grid.n_points))
    for n in range(n_max + 1):
        phi, dphi = _irregular(n, x)
        for m in range(n + 1):
            if method == "analytic":
                f = dpsi[m] * phi + psi[m] * dphi
            elif method == "stencil":
                f = _stencil_derivative(psi[m] * phi, grid.dx)
            else:
                raise ValueError(f"unknown method {method!r}")
            vals[m, n] = vals[n, m] = f
    meta = {"method": f"product-{method}", "ode_rtol": 1e-13, "version": METHOD_VERSION}
    return PatternTable(grid, n_max, vals, 1.0, meta)


def g_table(n_max: int, grid: Grid1D = DEFAULT_GRID) -> np.ndarray:
    """Products ``g_mn = psi_m psi_n``, shape ``(n_max+1, n_max+1, n_points)``."""
    psi = hermite_functions(n_max, grid.x)
    return psi[:, None, :] * psi[None, :, :]


def orthonormality_matrix(table: PatternTable) -> dict:
    """``pi int f_mn g_m'n' dx`` for every pair with equal ``m - n``.

    Returns a mapping ``((m, n), (m', n')) -> value``.
    """
    g = g_table(table.n_max, table.grid)
    x = table.grid.x
    out = {}
    d = table.n_max + 1
    for m in range(d):
        for n in range(d):
            for mp in range(d):
                np_ = mp - (m - n)
                if 0 <= np_ < d:
                    out[(m, n), (mp, np_)] = math.pi * float(np.trapezoid(table.values[m, n] * g[mp, np_], x))
    return out


# --------------------------------------------------------------------------
# Fourier route


def fourier_kernel(m: int, n: int, z, eta: float = 1.0) -> np.ndarray:
    """``f~_mn(z) = int exp(izx) f_mn(x; eta) dx`` in closed form.

    ``|z| (i sign z)^k l_j^k(z^2/2) exp[(1/eta - 1) z^2/4]`` with
    ``j = min(m, n)`` and ``k = |m - n|``.
    """
    z = np.asarray(z, dtype=float)
    j, k = min(m, n), abs(m - n)
    ell = laguerre_functions(k, j, 0.5 * z * z)[j]
    phase = (1j * np.sign(z)) ** k
    return np.abs(z) * phase * ell * np.exp(0.25 * (1.0 / eta - 1.0) * z * z)


def _z_cutoff(n_max: int, eta: float, eps: float) -> float:
    u_turn = 4 * n_max + 2
    damp = 2.0 - 1.0 / eta
    u = u_turn + 6 * math.sqrt(u_turn) + 2 * math.log(1 / eps) / damp
    return math.sqrt(2 * u)


def _trig(k: int, zx: np.ndarray) -> np.ndarray:
    if k % 2 == 0:
        return (-1) ** (k // 2) * np.cos(zx)
    return (-1) ** ((k - 1) // 2) * np.sin(zx)


def _gauss_nodes(z_max: float, x_abs: float, n_max: int):
    nodes = int(4 * z_max * (x_abs + 2 * math.sqrt(2 * n_max + 2)) / math.pi) + 200
    t, w = np.polynomial.legendre.leggauss(nodes)
    return 0.5 * z_max * (t + 1), 0.5 * z_max * w


def z_route_table(n_max: int, grid: Grid1D, eta: float, eps: float = 1e-8) -> PatternTable:
    """Loss-compensated sampling functions by Gauss-Legendre quadrature in z.

    Valid for ``eta > 1/2``, where the integrand is Gaussian-damped.
    The cutoff puts the truncated tail below ``eps`` relative to the peak.
    """
    if not eta > 0.5 or eta > 1:
        raise EtaOutOfRange(f"loss-compensated kernels need 1/2 < eta <= 1, got {eta}")
    z_max = _z_cutoff(n_max, eta, eps)
    x = grid.x
    z, w = _gauss_nodes(z_max, max(abs(grid.x_min), abs(grid.x_max)), n_max)
    gain = np.exp(0.25 * (1.0 / eta - 1.0) * z * z)
    zx = np.outer(x, z)
    vals = np.empty((n_max + 1, n_max + 1, grid.n_points))
    tail = 0.0
    for k in range(n_max + 1):
        ell = laguerre_functions(k, n_max - k, 0.5 * z * z)  # (n_max-k+1, Z)
        weights = ell * (w * z * gain) / math.pi
        peak = np.max(np.abs(ell * z * gain), axis=1)
        tail = max(tail, float(np.max(np.abs(ell[:, -1] * z[-1] * gain[-1]) / peak)))
        rows = _trig(k, zx) @ weights.T  # (X, n_max-k+1)
        for j in range(n_max - k + 1):
            vals[j, j + k] = vals[j + k, j] = rows[:, j]
    meta = {"method": "fourier", "z_max": z_max, "eps": eps, "tail_ratio": tail, "nodes": int(z.size), "version": METHOD_VERSION}
    return PatternTable(grid, n_max, vals, eta, meta)


def eta_compensated_table(n_max: int, grid: Grid1D = DEFAULT_GRID, eta: float = 1.0) -> PatternTable:
    """Sampling functions that undo detection loss of efficiency ``eta``.

    For ``eta = 1`` this is :func:`pattern_function_table`.

    Raises
    ------
    EtaOutOfRange
        For ``eta <= 1/2``, where the kernels are unbounded.
    """
    if not eta > 0.5 or eta > 1:
        raise EtaOutOfRange(f"loss-compensated kernels need 1/2 < eta <= 1, got {eta}")
    if eta == 1.0:
        return pattern_function_table(n_max, grid)
    return z_route_table(n_max, grid, eta)


# --------------------------------------------------------------------------
# phase-moment kernel


def _bernpoly(n: int, x: float) -> float:
    B = bernoulli(n)
    return float(sum(comb(n, j, exact=True) * B[j] * x ** (n - j) for j in range(n + 1)))


def inverse_factorial_coefficients(k: int, J: int = 4) -> np.ndarray:
    """Coefficients ``b_j`` with ``sqrt(n!/(n+k)!) ~ d_n sum_j b_j / (N)_j``.

    Here ``N = n + 1 + k/2``, ``d_n = n!/Gamma(N)`` and ``(N)_j`` is the rising
    factorial. Derived from the Stirling series of the log-gamma ratio.
    """
    h = 0.5 * k
    M = J + 1
    c = np.zeros(M + 1)
    for m in range(1, M + 1):
        c[m] = (-1) ** (m + 1) / (m * (m + 1)) * (_bernpoly(m + 1, 0.0) - 0.5 * _bernpoly(m + 1, -h) - 0.5 * _bernpoly(m + 1, h))
    r = np.zeros(M + 1)
    r[0] = 1.0
    for n in range(1, M + 1):
        r[n] = sum(j * c[j] * r[n - j] for j in range(1, n + 1)) / n
    basis = []
    for j in range(J + 1):
        p = np.zeros(M + 1)
        p[j] = 1.0
        for i in range(1, j):
            q = np.zeros(M + 1)
            for t in range(M + 1):
                q[t] = p[t] - (i * q[t - 1] if t else 0.0)
            p = q
        basis.append(p)
    A = np.array(basis).T[: J + 1, : J + 1]
    return np.linalg.solve(A, r[: J + 1])


def _upper_gamma(s: float, u: np.ndarray) -> np.ndarray:
    if s > 0:
        return gammaincc(s, u) * gamma(s)
    if s == 0:
        return exp1(u)
    return (_upper_gamma(s + 1, u) - u ** s * np.exp(-u)) / s


def _phase_sum_z(k: int, n_sum: int, u: np.ndarray, J: int):
    """``sum_n l_n^k(u)`` split into closed-form sums plus an explicit remainder."""
    beta = inverse_factorial_coefficients(k, J)
    total = np.zeros_like(u)
    for j in range(J + 1):
        a = 0.5 * k + j
        b = k - a
        # u^(k/2) e^(-u/2) sum_n Gamma(n+1)/Gamma(n+1+a) L_n^k(u) = u^(k/2) e^(u/2) u^(-b-1) Gamma(b+1, u) / Gamma(a)
        total += beta[j] / gamma(a) * np.exp(0.5 * u) * u ** (0.5 * k - b - 1) * _upper_gamma(b + 1, u)
    ell = laguerre_functions(k, n_sum, u)
    coef = np.empty(n_sum + 1)
    for n in range(n_sum + 1):
        N = n + 1 + 0.5 * k
        ratio = math.exp(0.5 * math.lgamma(n + 1) + 0.5 * math.lgamma(n + k + 1) - math.lgamma(N))
        s, prod = 0.0, 1.0
        for j in range(J + 1):
            s += beta[j] / prod
            prod *= N + j
        coef[n] = 1.0 - ratio * s
    return total + coef @ ell, coef, ell


@dataclass(frozen=True, eq=False)
class PhaseMomentKernel:
    """``K_k(x)`` normalized for phases over the full circle.

    ``Psi_k = int_0^{2pi} dphi int dx exp(ik phi) K_k(x) p(x, phi)``; on the
    half circle the same moment is ``2 int_0^pi ...``.
    """

    k: int
    grid: Grid1D
    values: np.ndarray
    n_sum: int
    tail_estimate: float
    meta: dict = field(default_factory=dict)

    def __call__(self, x) -> np.ndarray:
        return np.interp(x, self.grid.x, self.values)


def phase_moment_kernel(k: int, grid: Grid1D = DEFAULT_GRID, n_sum: int = 64, J: int = 4, tol: float = 1e-4) -> PhaseMomentKernel:
    """Sampling kernel for the exponential phase moment ``Psi_k``.

    The kernel is ``(1/2) sum_n f_{n+k,n}(x)``. Plain partial sums of this
    series oscillate without settling, so the Fock weights
    ``sqrt(n!/(n+k)!)`` are split into an inverse-factorial series, summed in
    closed form through incomplete gamma functions, plus a remainder whose
    terms fall off like ``n^-(J+1)`` and are summed explicitly to ``n_sum``.
    The ``1/z`` singularity of odd orders is subtracted and restored as
    ``(k/2) erf(x/sqrt 2)``; even orders are fixed up to the irrelevant
    additive constant by using ``cos(zx) - 1``.

    Raises
    ------
    NotConverged
        If the last remainder term exceeds ``tol`` anywhere on the grid.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    x = grid.x
    z_max = math.sqrt(8 * n_sum + 4 * k + 4) + 12.0
    z, w = _gauss_nodes(z_max, max(abs(grid.x_min), abs(grid.x_max)), n_sum)
    u = 0.5 * z * z
    gz, coef, ell = _phase_sum_z(k, n_sum, u, J)
    gz = z * gz
    zx = np.outer(x, z)
    sign = (-1) ** ((k - 1) // 2) if k % 2 else (-1) ** (k // 2)
    if k % 2:
        gz = gz - k / z * np.exp(-0.5 * z * z)
        vals = np.sin(zx) @ (w * gz) / math.pi + 0.5 * k * erf(x / math.sqrt(2.0))
    else:
        vals = (np.cos(zx) - 1.0) @ (w * gz) / math.pi
    last = np.abs(np.sin(zx) if k % 2 else np.cos(zx)) @ np.abs(w * z * coef[-1] * ell[-1]) / math.pi
    tail = 0.5 * float(np.max(last))
    if tail > tol:
        raise NotConverged(f"phase-moment kernel remainder term {tail:.2e} exceeds {tol:.1e}")
    meta = {"z_max": z_max, "nodes": int(z.size), "J": J, "normalization": "full-circle"}
    return PhaseMomentKernel(k, grid, 0.5 * sign * vals, n_sum, tail, meta)


def classical_phase_kernel(k: int, x) -> np.ndarray:
    """Large-|x| limit of the full-circle phase-moment kernel."""
    x = np.asarray(x, float)
    if k % 2:
        return 0.25 * (-1) ** ((k - 1) // 2) * k * np.sign(x)
    return (-1) ** ((k + 2) // 2) * k * np.log(np.abs(x)) / (2 * math.pi)
