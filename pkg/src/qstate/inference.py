"""Statistical inversion of linear models and maximum-entropy estimation.

Complex models ``y = A f`` are solved in realified form,
``[[Re A, -Im A], [Im A, Re A]] [Re f; Im f] = [Re y; Im y]``, so every solver
works on real arithmetic; results are mapped back to complex vectors.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import AllModesCut, FlatCurve, NearSingular, SolverDiverged
from .states import DensityMatrix

CONDITION_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class LinearModel:
    """``y = A f + noise`` with optional Hermitian weight (inverse covariance)."""

    A: np.ndarray
    W: np.ndarray | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A))
        if A.shape[0] < A.shape[1]:
            raise ValueError("model needs at least as many data as unknowns")
        object.__setattr__(self, "A", A)
        if self.W is not None:
            W = np.asarray(self.W)
            if W.ndim == 1:
                W = np.diag(W)
            if W.shape != (A.shape[0],) * 2:
                raise ValueError("weight matrix must be square with one row per datum")
            object.__setattr__(self, "W", W)

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.A) or (self.W is not None and np.iscomplexobj(self.W))


def _realify_matrix(M: np.ndarray) -> np.ndarray:
    return np.block([[M.real, -M.imag], [M.imag, M.real]])


def _realify(model: LinearModel, y):
    y = np.asarray(y)
    cplx = model.is_complex or np.iscomplexobj(y)
    if not cplx:
        W = None if model.W is None else model.W.real
        return model.A.real.astype(float), W, y.real.astype(float), False
    A = _realify_matrix(model.A.astype(complex))
    # circular complex noise of variance v has variance v/2 per real component
    W = None if model.W is None else 2.0 * _realify_matrix(model.W.astype(complex))
    yr = np.concatenate([y.real, y.imag]).astype(float)
    return A, W, yr, True


def _complexify(v: np.ndarray, cplx: bool):
    if not cplx:
        return v
    n = v.shape[0] // 2
    return v[:n] + 1j * v[n:]


def _complex_cov(C: np.ndarray, cplx: bool) -> np.ndarray:
    if not cplx:
        return C
    n = C.shape[0] // 2
    # covariance E[(f - Ef)(f - Ef)^dag] from the real block covariance
    return (C[:n, :n] + C[n:, n:]) + 1j * (C[n:, :n] - C[:n, n:])


@dataclass
class SolveResult:
    estimate: np.ndarray
    covariance: np.ndarray | None = None
    condition: float = float("nan")
    residual_norm: float = float("nan")
    info: dict = field(default_factory=dict)


def _weight_factor(W):
    if W is None:
        return None
    lam, V = np.linalg.eigh(0.5 * (W + W.T))
    return (V * np.sqrt(np.clip(lam, 0.0, None))).T  # L with W = L^T L


def least_squares(model: LinearModel, y, condition_limit: float = CONDITION_LIMIT) -> SolveResult:
    """Weighted least squares ``(A^dag W A)^-1 A^dag W y``.

    Returns the estimate and its covariance ``(A^dag W A)^-1``.

    Raises
    ------
    NearSingular
        If the normal matrix has condition number above ``condition_limit``.
    """
    A, W, yr, cplx = _realify(model, y)
    L = _weight_factor(W)
    As, ys = (A, yr) if L is None else (L @ A, L @ yr)
    normal = As.T @ As
    cond = float(np.linalg.cond(normal))
    if not np.isfinite(cond) or cond > condition_limit:
        raise NearSingular("normal matrix of the least-squares problem is near singular", cond)
    f, *_ = np.linalg.lstsq(As, ys, rcond=None)
    cov = np.linalg.inv(normal)
    res = float(np.linalg.norm(A @ f - yr))
    return SolveResult(_complexify(f, cplx), _complex_cov(cov, cplx), cond, res)


def _svd(model: LinearModel, y):
    A, W, yr, cplx = _realify(model, y)
    L = _weight_factor(W)
    As, ys = (A, yr) if L is None else (L @ A, L @ yr)
    U, s, Vt = np.linalg.svd(As, full_matrices=False)
    return U, s, Vt, ys, A, yr, cplx


def tikhonov(model: LinearModel, y, lam: float) -> SolveResult:
    """Tikhonov estimate ``(lam^2 I + A^dag W A)^-1 A^dag W y`` via SVD filter factors."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    U, s, Vt, ys, A, yr, cplx = _svd(model, y)
    with np.errstate(divide="ignore", invalid="ignore"):
        filt = np.where(s > 0, s / (s * s + lam * lam), 0.0)
    f = Vt.T @ (filt * (U.T @ ys))
    res = float(np.linalg.norm(A @ f - yr))
    return SolveResult(_complexify(f, cplx), None, float(s[0] / s[-1]) if s[-1] > 0 else math.inf, res, {"lambda": lam})


def svd_pseudoinverse(model: LinearModel, y, sigma0: float) -> SolveResult:
    """Pseudoinverse that discards eigencomponents of ``A^dag W A`` below ``sigma0``.

    Raises
    ------
    AllModesCut
        If no eigenvalue reaches ``sigma0``.
    """
    if sigma0 <= 0:
        raise ValueError("sigma0 must be > 0")
    U, s, Vt, ys, A, yr, cplx = _svd(model, y)
    keep = s * s >= sigma0
    if not np.any(keep):
        raise AllModesCut(f"all {s.size} eigenvalues of the normal matrix are below {sigma0}")
    f = Vt[keep].T @ ((U[:, keep].T @ ys) / s[keep])
    res = float(np.linalg.norm(A @ f - yr))
    return SolveResult(_complexify(f, cplx), None, float(s[keep][0] / s[keep][-1]), res, {"sigma0": sigma0, "kept": int(keep.sum())})


@dataclass
class LCurve:
    lam_star: float
    lambdas: np.ndarray
    norms: np.ndarray
    residuals: np.ndarray
    curvature: np.ndarray


def l_curve_select(model: LinearModel, y, lambdas) -> LCurve:
    """Pick the Tikhonov parameter at the L-curve corner.

    The corner is the maximum of the curvature of
    ``(log residual, log norm)`` parametrized by ``log lambda``. For data the
    model reproduces exactly the smallest ``lambda`` is returned.
    """
    lambdas = np.asarray(lambdas, float)
    if lambdas.size < 8 or np.any(lambdas <= 0):
        raise ValueError("need at least 8 positive lambda values")
    lambdas = np.sort(lambdas)
    sols = [tikhonov(model, y, lam) for lam in lambdas]
    norms = np.array([np.linalg.norm(s.estimate) for s in sols])
    res = np.array([s.residual_norm for s in sols])
    yn = float(np.linalg.norm(y))
    if res[0] <= 1e-12 * max(yn, 1e-300):
        return LCurve(float(lambdas[0]), lambdas, norms, res, np.zeros_like(lambdas))
    t = np.log(lambdas)
    rho = np.log(res)
    eta = np.log(np.maximum(norms, 1e-300))
    r1, e1 = np.gradient(rho, t), np.gradient(eta, t)
    r2, e2 = np.gradient(r1, t), np.gradient(e1, t)
    kappa = (r1 * e2 - r2 * e1) / np.maximum((r1 * r1 + e1 * e1) ** 1.5, 1e-300)
    i = int(np.argmax(kappa[1:-1])) + 1
    # a pronounced corner stands at least twice above the mean curvature level
    if kappa[i] < 2.0 * float(np.mean(np.abs(kappa))):
        warnings.warn("L-curve corner is not pronounced", FlatCurve, stacklevel=2)
    return LCurve(float(lambdas[i]), lambdas, norms, res, kappa)


# --------------------------------------------------------------------------
# maximum entropy


@dataclass
class MaxEntResult:
    state: DensityMatrix
    multipliers: np.ndarray
    residual: float
    fallback: bool
    iterations: int
    trace: list = field(default_factory=list)


def _gibbs(obs: np.ndarray, lam: np.ndarray):
    dim = obs.shape[1]
    H = np.tensordot(lam, obs, axes=1) if lam.size else np.zeros((dim, dim), complex)
    H = 0.5 * (H + H.conj().T)
    e, V = np.linalg.eigh(H)
    shift = e.min()
    w = np.exp(-(e - shift))
    Z = w.sum()
    rho = (V * (w / Z)) @ V.conj().T
    logZ = math.log(Z) - shift
    return rho, e, V, w / Z, logZ


def _kubo_mori(obs_eig: np.ndarray, e: np.ndarray, p: np.ndarray, mean: np.ndarray) -> np.ndarray:
    de = e[:, None] - e[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        F = np.where(np.abs(de) > 1e-12, (p[None, :] - p[:, None]) / de, p[:, None])
    F = np.real(F)
    H = np.einsum("iab,jba,ab->ij", obs_eig, obs_eig, F).real
    return H - np.outer(mean, mean)


def max_entropy_estimate(observables, means, n_max: int, sigma=None, max_iter: int = 200, tol: float = 1e-10) -> MaxEntResult:
    """Maximum-entropy state ``exp(-sum_i lam_i A_i)/Z`` matching given averages.

    The multipliers minimize the convex dual ``log Z + sum_i lam_i <A_i>`` by
    Newton steps with exact Kubo-Mori Hessian, halving the step up to 30
    times whenever the dual increases. If Newton fails, or the averages are
    incompatible with any state, the squared misfit between target and
    model averages is minimized instead and ``fallback`` is set. With
    ``sigma`` given, a final misfit above ``5 sigma`` also counts as
    infeasible.

    Raises
    ------
    SolverDiverged
        When the fallback minimization fails too.
    """
    dim = n_max + 1
    obs = np.array([np.asarray(a, complex) for a in observables]).reshape(-1, dim, dim)
    means = np.asarray(means, float).reshape(-1)
    if obs.shape[0] != means.size:
        raise ValueError("one mean per observable required")
    if obs.shape[0] > 16 or dim > 32:
        raise ValueError("at most 16 observables and dimension 32 supported")
    lam = np.zeros(means.size)
    trace = []

    def dual(lv):
        return _gibbs(obs, lv)[4] + float(lv @ means)

    def model_means(rho):
        return np.real(np.einsum("iab,ba->i", obs, rho))

    converged = False
    it = 0
    if means.size == 0:
        converged = True
    else:
        current = dual(lam)
        for it in range(1, max_iter + 1):
            rho, e, V, p, logZ = _gibbs(obs, lam)
            mm = model_means(rho)
            grad = means - mm
            trace.append((it, float(current), float(np.max(np.abs(grad)))))
            if np.max(np.abs(grad)) < tol:
                converged = True
                break
            obs_eig = np.einsum("ba,ibc,cd->iad", V.conj(), obs, V)
            Hs = _kubo_mori(obs_eig, e, p, mm)
            try:
                step = -np.linalg.solve(Hs + 1e-14 * np.eye(lam.size), grad)
            except np.linalg.LinAlgError:
                step = -grad
            t = 1.0
            for _ in range(30):
                trial = lam + t * step
                val = dual(trial)
                if np.isfinite(val) and val <= current + 1e-15 * abs(current):
                    break
                t *= 0.5
            else:
                break
            lam, current = trial, val
            if np.max(np.abs(lam)) > 1e6:
                break
    rho = _gibbs(obs, lam)[0]
    resid = float(np.linalg.norm(model_means(rho) - means)) if means.size else 0.0
    feasible = converged and (sigma is None or resid <= 5 * float(np.max(sigma)))
    fallback = False
    if not feasible:
        fallback = True

        def misfit(lv):
            return float(np.sum((model_means(_gibbs(obs, lv)[0]) - means) ** 2))

        opt = minimize(misfit, np.zeros_like(lam), method="BFGS", options={"gtol": 1e-12, "maxiter": 2000})
        if not np.all(np.isfinite(opt.x)):
            raise SolverDiverged("maximum-entropy fallback diverged", trace)
        lam = opt.x
        rho = _gibbs(obs, lam)[0]
        resid = float(np.linalg.norm(model_means(rho) - means))
    state = DensityMatrix(0.5 * (rho + rho.conj().T), "max_entropy")
    return MaxEntResult(state, lam, resid, fallback, it, trace)
