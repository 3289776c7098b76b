"""Weighted S- and MM-estimation of linear regression.

Every routine takes a nonnegative multiplicity vector, so an unweighted fit,
a fit on a multinomially weighted bag and a fit on the row-expanded bootstrap
sample all go through the same code. Rows with zero weight are dropped before
any computation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack

from .dataset import Dataset, check_weights
from .exceptions import (ConvergenceError, DegenerateScaleError,
                         SingularDesignError)
from .losses import DEFAULT_LOSS0, DEFAULT_LOSS1, TukeyLoss, mscale_constant

logger = logging.getLogger(__name__)

_GRAM_COND_CAP = 1e13
# above this many bytes the batched candidate Gram matrices are built one by one
_BATCH_BYTES = 64 * 2**20


@dataclass(frozen=True)
class FitConfig:
    """Numerical settings of the S/MM fit.

    The candidate search follows the usual FastS recipe: ``n_candidates``
    random elemental subsets, ``n_isteps`` concentration steps each, then
    full refinement of the ``n_best`` lowest-scale candidates.
    """

    loss0: TukeyLoss = DEFAULT_LOSS0
    loss1: TukeyLoss = DEFAULT_LOSS1
    n_candidates: int = 500
    n_isteps: int = 2
    n_best: int = 5
    scale_tol: float = 1e-9
    irls_tol: float = 1e-10
    s_tol: float = 1e-10
    max_iter: int = 200
    max_redraws: int = 50

    @property
    def m(self) -> float:
        return mscale_constant(self.loss0)


DEFAULT_FIT_CONFIG = FitConfig()


@dataclass(frozen=True)
class RobustFit:
    """Joint MM solution: regression ``theta_mm``, S-scale ``sigma`` and
    S-regression ``theta_s``."""

    theta_mm: np.ndarray
    sigma: float
    theta_s: np.ndarray
    iterations: dict
    converged: bool
    score_residual_norm: float
    exact: bool = False
    objective_trace: tuple = field(default=(), repr=False)

    @property
    def p(self) -> int:
        return self.theta_mm.shape[0]


# ---------------------------------------------------------------------------
# M-scale
# ---------------------------------------------------------------------------


def _weighted_median(x, w):
    order = np.argsort(x, kind="stable")
    cw = np.cumsum(w[order])
    return x[order][np.searchsorted(cw, 0.5 * cw[-1])]


def _mean_rho(loss, a, w, s):
    return float(np.dot(w, loss.rho(a / s)))


def solve_mscale(residuals, loss0: TukeyLoss = DEFAULT_LOSS0, m=None, tol=1e-9,
                 weights=None, max_iter=200, s0=None) -> float:
    """Solve sum_i w_i rho0(r_i / s) / sum_i w_i = m for s > 0.

    Fixed-point iteration ``s <- s * sqrt(mean rho0(r/s) / m)`` with a
    log-space bisection fallback.
    """
    a = np.abs(np.asarray(residuals, dtype=float)).ravel()
    w = check_weights(weights, a.shape[0])
    keep = w > 0
    a, w = a[keep], w[keep] / w[keep].sum()
    if m is None:
        m = mscale_constant(loss0)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not np.all(np.isfinite(a)):
        raise ValueError("residuals must be finite")
    nonzero = w[a > 0].sum()
    if nonzero == 0:
        raise DegenerateScaleError("all residuals are zero")
    if nonzero * loss0.rho_max <= m * (1 + 1e-12):
        raise DegenerateScaleError(
            f"only a fraction {nonzero:.3g} of residuals is nonzero; the scale collapses to 0")

    s = s0 if s0 is not None and s0 > 0 else _weighted_median(a, w) / 0.6745
    if not s > 0:
        s = float(np.dot(w, a)) / nonzero
    for _ in range(max_iter):
        s_new = s * np.sqrt(_mean_rho(loss0, a, w, s) / m)
        if abs(s_new - s) <= tol * s_new:
            s = s_new
            break
        s = s_new
    else:
        s = _bisect_mscale(loss0, a, w, m, s, tol, max_iter)
    if abs(_mean_rho(loss0, a, w, s) - m) > tol * max(m, 1.0) * 10:
        s = _bisect_mscale(loss0, a, w, m, s, tol, max_iter)
    return float(s)


def _bisect_mscale(loss, a, w, m, s, tol, max_iter):
    lo = hi = s
    for _ in range(2000):
        if _mean_rho(loss, a, w, lo) >= m:
            break
        lo *= 0.5
    for _ in range(2000):
        if _mean_rho(loss, a, w, hi) <= m:
            break
        hi *= 2.0
    for _ in range(max(max_iter, 200)):
        mid = np.sqrt(lo * hi)
        if _mean_rho(loss, a, w, mid) > m:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            return 0.5 * (lo + hi)
    raise ConvergenceError("M-scale bisection did not converge", last_iterate=np.sqrt(lo * hi),
                           residual=abs(_mean_rho(loss, a, w, np.sqrt(lo * hi)) - m))


def _mscale_columns(A, w, loss, m, tol, s0=None, max_iter=200):
    """Vectorized M-scale of every column of |residuals| ``A`` (b x N).

    ``w`` are normalized row weights. Columns whose scale degenerates to 0
    (a weighted majority of exact zeros) get 0.
    """
    N = A.shape[1]
    s = np.empty(N)
    nonzero = w @ (A > 0)
    degenerate = nonzero * loss.rho_max <= m * (1 + 1e-12)
    s[degenerate] = 0.0
    live = np.flatnonzero(~degenerate)
    if live.size == 0:
        return s
    if s0 is None:
        cur = np.array([_weighted_median(A[:, j], w) for j in live]) / 0.6745
    else:
        cur = np.asarray(s0, dtype=float)[live].copy()
    bad = ~(cur > 0)
    if bad.any():
        cur[bad] = (w @ A[:, live[bad]]) / nonzero[live[bad]]
    # Newton in log s (quadratic convergence), steps clipped to a factor e
    sub = A[:, live]
    done = np.zeros(live.size, dtype=bool)
    for _ in range(max_iter):
        U = sub / cur
        f = w @ loss.rho(U) - m
        g = w @ (loss.psi(U) * U)
        step = np.where(g > 0, f / np.where(g > 0, g, 1.0), 1.0)
        step = np.clip(step, -1.0, 1.0)
        cur = cur * np.exp(step)
        done = np.abs(step) <= tol
        if done.all():
            break
    for k in np.flatnonzero(~done):
        cur[k] = _bisect_mscale(loss, sub[:, k], w, m, cur[k], tol, max_iter)
    s[live] = cur
    return s


# ---------------------------------------------------------------------------
# Weighted least squares
# ---------------------------------------------------------------------------


def _solve_gram(G, rhs):
    """Cholesky solve of a symmetric positive definite system with a
    reciprocal-condition check."""
    if not np.all(np.isfinite(G)):
        raise SingularDesignError("weighted Gram matrix has non-finite entries")
    chol, info = lapack.dpotrf(G, lower=False, clean=False)
    if info != 0:
        raise SingularDesignError("weighted Gram matrix is not positive definite")
    rcond, info = lapack.dpocon(chol, np.abs(G).sum(axis=0).max())
    if info != 0 or rcond * _GRAM_COND_CAP < 1.0:
        raise SingularDesignError(f"weighted Gram matrix is singular (rcond={rcond:.2e})")
    x, info = lapack.dpotrs(chol, rhs, lower=False)
    return x


def _wls(Z, y, w):
    Zw = Z * w[:, None]
    return _solve_gram(Zw.T @ Z, Zw.T @ y)


def fit_ls(data: Dataset, weights=None) -> np.ndarray:
    """Weighted least squares from the normal equations."""
    w = check_weights(weights, data.n)
    return _wls(data.Z, data.y, w)


# ---------------------------------------------------------------------------
# S-estimation
# ---------------------------------------------------------------------------


def _active_rows(data, weights):
    w = check_weights(weights, data.n)
    keep = w > 0
    n_eff = int(keep.sum())
    if n_eff <= data.p:
        raise SingularDesignError(
            f"effective sample size {n_eff} must exceed the dimension p={data.p}")
    return data.Z[keep], data.y[keep], w[keep] / w[keep].sum()


def _scale_floor(y, w):
    ref = float(np.dot(w, np.abs(y)))
    return 1e-12 * (ref if ref > 0 else 1.0)


def _draw_elemental(Z, y, N, rng, max_redraws):
    b, p = Z.shape
    thetas = np.empty((N, p))
    todo = np.arange(N)
    for _ in range(max_redraws + 1):
        idx = np.stack([rng.choice(b, size=p, replace=False) for _ in todo])
        Zs = Z[idx]
        ok = np.linalg.cond(Zs) < _GRAM_COND_CAP ** 0.5
        if ok.any():
            thetas[todo[ok]] = np.linalg.solve(Zs[ok], y[idx[ok]][..., None])[..., 0]
        todo = todo[~ok]
        if todo.size == 0:
            return thetas
    raise SingularDesignError(
        f"could not draw nonsingular elemental subsets after {max_redraws} redraws; "
        "the design is not in general position")


def _column_mad(A, w):
    if np.ptp(w) == 0:
        return np.median(A, axis=0) / 0.6745
    return np.array([_weighted_median(A[:, j], w) for j in range(A.shape[1])]) / 0.6745


def _batched_wls(Z, ZZ, y, Wmat, thetas):
    """One weighted LS solve per column of ``Wmat``; singular columns keep ``thetas``."""
    b, p = Z.shape
    N = Wmat.shape[1]
    if ZZ is not None:
        G = (ZZ.T @ Wmat).T.reshape(N, p, p)
    else:
        G = np.stack([(Z * Wmat[:, j, None]).T @ Z for j in range(N)])
    rhs = (Z.T @ (Wmat * y[:, None])).T
    out = thetas.copy()
    ok = np.all(np.isfinite(G), axis=(1, 2)) & (np.linalg.cond(G) < _GRAM_COND_CAP)
    if ok.any():
        out[ok] = np.linalg.solve(G[ok], rhs[ok][..., None])[..., 0]
    return out


def _refine_s(Z, y, w, theta, s, loss0, m, cfg):
    """Descend the M-scale from ``theta`` to a local minimum.

    Concentration steps (weighted LS with the rho0 weights) are monotone but
    converge slowly for the low-efficiency rho0; once they settle, a Newton
    step on the score sum w psi0(r/s) z = 0 is tried and kept only when it
    lowers the scale.
    """
    floor = _scale_floor(y, w)

    def scale_at(th, s0):
        return solve_mscale(y - Z @ th, loss0, m, cfg.scale_tol, w, s0=s0)

    try:
        s = scale_at(theta, s if s > 0 else None)
    except DegenerateScaleError:
        return theta, 0.0, 0, True
    rel_step = np.inf
    it = 0
    for it in range(1, cfg.max_iter + 1):
        if s <= floor:
            return theta, s, it, True
        u = (y - Z @ theta) / s
        new = None
        if rel_step < 1e-2:
            try:
                B = (Z * (w * loss0.psi_deriv(u))[:, None]).T @ Z
                trial = theta + s * _solve_gram(B, Z.T @ (w * loss0.psi(u)))
                s_trial = scale_at(trial, s)
                if s_trial <= s:
                    new, s_new = trial, s_trial
            except (SingularDesignError, DegenerateScaleError):
                new = None
        if new is None:
            new = _wls(Z, y, w * loss0.weight(u))
            try:
                s_new = scale_at(new, s)
            except DegenerateScaleError:
                return new, 0.0, it, True
        delta = new - theta
        theta, s = new, s_new
        rel_step = np.sqrt(np.mean((Z @ delta) ** 2)) / s if s > 0 else 0.0
        if _small_step(delta, theta, Z, s, cfg.s_tol):
            break
    else:
        logger.debug("S refinement hit max_iter=%d", cfg.max_iter)
    return theta, s, it, s <= floor


def _small_step(delta, theta, Z, s, tol):
    if np.linalg.norm(delta) <= tol * np.linalg.norm(theta):
        return True
    return np.sqrt(np.mean((Z @ delta) ** 2)) <= tol * s


def _s_search(Z, y, w, loss0, cfg, rng):
    b, p = Z.shape
    m = cfg.m
    N = cfg.n_candidates
    thetas = _draw_elemental(Z, y, N, rng, cfg.max_redraws)
    ZZ = None
    if b * p * p * 8 <= _BATCH_BYTES:
        ZZ = (Z[:, :, None] * Z[:, None, :]).reshape(b, p * p)
    R = y[:, None] - Z @ thetas.T
    A = np.abs(R)
    scales = _column_mad(A, w)
    for _ in range(cfg.n_isteps):
        live = scales > 0
        safe = np.where(live, scales, 1.0)
        U = A / safe
        scales = np.where(live, safe * np.sqrt((w @ loss0.rho(U)) / m), 0.0)
        Wmat = w[:, None] * loss0.weight(U)
        Wmat[:, ~live] = w[:, None]
        thetas = _batched_wls(Z, ZZ, y, Wmat, thetas)
        A = np.abs(y[:, None] - Z @ thetas.T)
    scales = _mscale_columns(A, w, loss0, m, cfg.scale_tol, s0=scales)
    # stable sort: among equal scales the lowest candidate index wins
    best = np.argsort(scales, kind="stable")[: cfg.n_best]

    result = None
    total_iter = 0
    for j in best:
        theta, s, it, exact = _refine_s(Z, y, w, thetas[j], scales[j], loss0, m, cfg)
        total_iter += it
        if result is None or s < result[1]:
            result = (theta, s, exact)
    theta, s, exact = result
    return theta, s, exact, total_iter


def fit_s(data: Dataset, weights=None, loss0: TukeyLoss | None = None,
          config: FitConfig = DEFAULT_FIT_CONFIG, seed=None):
    """S-estimate of regression and scale; returns ``(theta_s, sigma)``."""
    theta, sigma, _, _ = _fit_s(data, weights, loss0 or config.loss0, config, seed)
    return theta, sigma


def _fit_s(data, weights, loss0, config, seed):
    Z, y, w = _active_rows(data, weights)
    rng = np.random.default_rng(seed)
    theta, s, exact, iters = _s_search(Z, y, w, loss0, config, rng)
    floor = _scale_floor(y, w)
    if exact or s <= floor:
        s, exact = floor, True
    return theta, float(s), exact, iters


# ---------------------------------------------------------------------------
# MM-estimation
# ---------------------------------------------------------------------------


def fit_mm(data: Dataset, weights=None, loss0: TukeyLoss | None = None,
           loss1: TukeyLoss | None = None, config: FitConfig = DEFAULT_FIT_CONFIG,
           seed=None) -> RobustFit:
    """MM-estimate: IRLS for the rho1 score equation started at the S-estimate,
    with the scale held at the S-scale."""
    loss0 = loss0 or config.loss0
    loss1 = loss1 or config.loss1
    theta_s, sigma, exact, s_iter = _fit_s(data, weights, loss0, config, seed)
    Z, y, w = _active_rows(data, weights)

    theta = theta_s.copy()
    trace = [float(w @ loss1.rho((y - Z @ theta) / sigma))]
    converged = False
    mm_iter = 0
    for mm_iter in range(1, config.max_iter + 1):
        r = y - Z @ theta
        new = _wls(Z, y, w * loss1.weight(r / sigma))
        delta = new - theta
        theta = new
        trace.append(float(w @ loss1.rho((y - Z @ theta) / sigma)))
        if _small_step(delta, theta, Z, sigma, config.irls_tol):
            converged = True
            break
    score = np.linalg.norm(Z.T @ (w * loss1.psi((y - Z @ theta) / sigma)))
    if not converged:
        raise ConvergenceError(
            f"MM IRLS did not converge in {config.max_iter} iterations",
            last_iterate=theta, residual=score)
    return RobustFit(theta_mm=theta, sigma=sigma, theta_s=theta_s,
                     iterations={"s": s_iter, "mm": mm_iter}, converged=converged,
                     score_residual_norm=float(score), exact=exact,
                     objective_trace=tuple(trace))
