"""Fast-and-robust bootstrap replicas of the MM-estimator inside a bag.

A bag's MM fit is a fixed point of the joint map

    theta <- (sum w_i W1(r_i/sigma) z_i z_i')^{-1} sum w_i W1(r_i/sigma) z_i y_i
    sigma <- (sigma / m) * sum w_i rho0(rt_i/sigma) / sum w_i

where ``r`` are residuals at ``theta`` and ``rt`` residuals at the S-regression
estimate. A replica evaluates the map once at the bag fit with multinomial
weights and corrects the step with ``[I - J]^{-1}``, J being the Jacobian of
the map at the fit with unit weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .exceptions import SingularDesignError
from .losses import DEFAULT_LOSS0, DEFAULT_LOSS1, mscale_constant
from .robust_fit import RobustFit, _solve_gram

CONDITION_CAP = 1e8


@dataclass(frozen=True)
class CorrectionOperator:
    """``matrix`` is [I - J]^{-1} over (theta, sigma), shape (p+1, p+1).

    ``joint=False`` keeps only the theta block and a scalar sigma
    correction, i.e. the two blocks are corrected independently.
    """

    matrix: np.ndarray
    jacobian: np.ndarray
    condition_estimate: float
    joint: bool = True


@dataclass(frozen=True)
class FRBReplica:
    theta_star: np.ndarray
    sigma_star: float
    weight_seed: object = None


class ReplicaSkipped(SingularDesignError):
    """The one-step Gram matrix of a replica is singular (multinomial degeneracy)."""


def one_step(fit: RobustFit, bag: Dataset, counts, loss0=DEFAULT_LOSS0, loss1=DEFAULT_LOSS1):
    """Weighted one-step MM estimates ``(theta_1, sigma_1)``.

    ``counts`` may be the integer multinomial weights or any nonnegative
    reals; the map only depends on them up to normalization.
    """
    w = np.asarray(counts, dtype=float)
    if w.shape != (bag.n,):
        raise ValueError(f"counts must have length {bag.n}, got {w.shape}")
    Z, y = bag.Z, bag.y
    u = (y - Z @ fit.theta_mm) / fit.sigma
    # omega_i = psi1(r_i/sigma)/r_i = W1(u_i)/sigma; the 1/sigma cancels in the solve
    ww = w * loss1.weight(u)
    Zw = Z * ww[:, None]
    try:
        theta_1 = _solve_gram(Zw.T @ Z, Zw.T @ y)
    except SingularDesignError as exc:
        raise ReplicaSkipped(str(exc)) from exc
    # sum_i n_i upsilon_i rt_i with upsilon_i = sigma/(n m) rho0(rt_i/sigma)/rt_i
    ut = (y - Z @ fit.theta_s) / fit.sigma
    sigma_1 = fit.sigma * float(w @ loss0.rho(ut)) / (w.sum() * mscale_constant(loss0))
    return theta_1, sigma_1


def fixed_point_map(theta, sigma, fit: RobustFit, bag: Dataset, counts=None,
                    loss0=DEFAULT_LOSS0, loss1=DEFAULT_LOSS1):
    """The joint map evaluated at an arbitrary (theta, sigma); used for
    finite-difference checks of :func:`jacobian`."""
    w = np.ones(bag.n) if counts is None else np.asarray(counts, dtype=float)
    Z, y = bag.Z, bag.y
    u = (y - Z @ theta) / sigma
    Zw = Z * (w * loss1.weight(u))[:, None]
    theta_new = np.linalg.solve(Zw.T @ Z, Zw.T @ y)
    ut = (y - Z @ fit.theta_s) / sigma
    sigma_new = sigma * float(w @ loss0.rho(ut)) / (w.sum() * mscale_constant(loss0))
    return np.append(theta_new, sigma_new)


def jacobian(fit: RobustFit, bag: Dataset, loss0=DEFAULT_LOSS0, loss1=DEFAULT_LOSS1):
    """Analytic Jacobian of :func:`fixed_point_map` at the bag fit, unit weights.

    With u = r/sigma at the fit, A = sum W1(u) z z' and e the residuals at
    the mapped point theta_new:

        d theta / d theta = -A^{-1} sum W1'(u) (e / sigma) z z'
        d theta / d sigma = -A^{-1} sum W1'(u) u (e / sigma) z
        d sigma / d theta = 0
        d sigma / d sigma = (mean rho0(ut) - mean psi0(ut) ut) / m

    At an exact fixed point e = r and the theta block reduces to
    I - A^{-1} sum psi1'(u) z z'.
    """
    Z, y = bag.Z, bag.y
    p = Z.shape[1]
    sigma = fit.sigma
    u = (y - Z @ fit.theta_mm) / sigma
    W = loss1.weight(u)
    A = (Z * W[:, None]).T @ Z
    theta_new = np.linalg.solve(A, (Z * W[:, None]).T @ y)
    g = loss1.weight_deriv(u) * (y - Z @ theta_new) / sigma
    rhs = np.column_stack([(Z * g[:, None]).T @ Z, Z.T @ (g * u)])
    J = np.zeros((p + 1, p + 1))
    J[:p, :] = -np.linalg.solve(A, rhs)
    ut = (y - Z @ fit.theta_s) / sigma
    J[p, p] = float(np.mean(loss0.rho(ut)) - np.mean(loss0.psi(ut) * ut)) / mscale_constant(loss0)
    return J


def correction_operator(fit: RobustFit, bag: Dataset, loss0=DEFAULT_LOSS0,
                        loss1=DEFAULT_LOSS1, joint=True, condition_cap=CONDITION_CAP):
    """[I - J]^{-1} at the bag fit; raises if I - J is too ill-conditioned."""
    if not fit.sigma > 0:
        raise ValueError("the fit must have a positive scale")
    J = jacobian(fit, bag, loss0, loss1)
    p = fit.p
    if not joint:
        J = J.copy()
        J[:p, p] = 0.0
        J[p, :p] = 0.0
    K = np.eye(p + 1) - J
    cond = float(np.linalg.cond(K)) if np.all(np.isfinite(K)) else np.inf
    if not cond < condition_cap:
        raise SingularDesignError(
            f"I - J is ill-conditioned (condition {cond:.3g} >= cap {condition_cap:.3g})")
    return CorrectionOperator(matrix=np.linalg.inv(K), jacobian=J,
                              condition_estimate=cond, joint=joint)


def frb_replica(fit: RobustFit, bag: Dataset, counts, corr: CorrectionOperator,
                loss0=DEFAULT_LOSS0, loss1=DEFAULT_LOSS1, weight_seed=None) -> FRBReplica:
    theta_1, sigma_1 = one_step(fit, bag, counts, loss0, loss1)
    p = fit.p
    step = np.empty(p + 1)
    step[:p] = theta_1 - fit.theta_mm
    step[p] = sigma_1 - fit.sigma
    corrected = corr.matrix @ step
    return FRBReplica(theta_star=fit.theta_mm + corrected[:p],
                      sigma_star=fit.sigma + float(corrected[p]),
                      weight_seed=weight_seed)
