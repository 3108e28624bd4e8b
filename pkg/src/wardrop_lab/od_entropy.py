"""Most probable correspondence (origin-destination) matrix.

The matrix minimises ``sum x ln x + 2 sum c x`` over nonnegative matrices with
prescribed row sums ``L`` and column sums ``W``.  Its optimality conditions give
``x_ij = exp(-1 - lamL_i - lamW_j - 2 c_ij)``; the multipliers are found by
alternating (Bregman / Sinkhorn) balancing carried out on the multipliers
themselves, so large costs never underflow.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import InfeasibleMarginals, NonConvergence, PreconditionError

MARGINAL_RTOL = 1e-12


@dataclass(frozen=True)
class ZoneData:
    L: np.ndarray
    W: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        L = np.atleast_1d(np.asarray(self.L, dtype=float))
        W = np.atleast_1d(np.asarray(self.W, dtype=float))
        c = np.atleast_2d(np.asarray(self.c, dtype=float))
        n = L.shape[0]
        if W.shape != (n,) or c.shape != (n, n):
            raise PreconditionError(
                f"shape mismatch: L{L.shape}, W{W.shape}, c{c.shape}")
        if np.any(L <= 0) or np.any(W <= 0):
            raise PreconditionError("marginals L and W must be strictly positive")
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise PreconditionError("costs must be finite and nonnegative")
        if abs(L.sum() - W.sum()) > MARGINAL_RTOL * max(L.sum(), W.sum()):
            raise InfeasibleMarginals(
                f"sum(L)={L.sum():.17g} differs from sum(W)={W.sum():.17g}")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "c", c)

    @property
    def n(self) -> int:
        return self.L.shape[0]

    @property
    def N(self) -> float:
        return float(self.L.sum())


@dataclass
class CorrespondenceMatrix:
    X: np.ndarray
    lambdaL: np.ndarray
    lambdaW: np.ndarray
    residual: float
    iterations: int

    def to_dict(self):
        return {
            "X": self.X.tolist(),
            "lambdaL": self.lambdaL.tolist(),
            "lambdaW": self.lambdaW.tolist(),
            "residual": float(self.residual),
            "iterations": int(self.iterations),
        }


@dataclass
class PrimalDualReport:
    max_dual_deviation: float
    max_marginal_violation: float
    worst_cell: tuple[int, int]
    worst_marginal: tuple[str, int]
    passed: bool
    details: dict = field(default_factory=dict)


def entropy_objective(X, c) -> float:
    """``sum x ln x + 2 sum c x`` with the convention ``0 ln 0 = 0``."""
    X = np.asarray(X, dtype=float)
    c = np.asarray(c, dtype=float)
    if np.any(X < 0):
        raise PreconditionError("entropy objective needs a nonnegative matrix")
    pos = X > 0
    xlogx = np.zeros_like(X)
    xlogx[pos] = X[pos] * np.log(X[pos])
    return float(xlogx.sum() + 2.0 * np.sum(c * X))


def _log_kernel(c):
    return -1.0 - 2.0 * c


def primal_from_duals(lambdaL, lambdaW, c):
    return np.exp(_log_kernel(c) - lambdaL[:, None] - lambdaW[None, :])


def _marginal_residual(X, L, W):
    rows = np.abs(X.sum(axis=1) - L) / L
    cols = np.abs(X.sum(axis=0) - W) / W
    return max(rows.max(), cols.max())


def balance(z: ZoneData, tol: float = 1e-12, max_iter: int = 10_000) -> CorrespondenceMatrix:
    """Solve the entropy-linear program by alternating row/column balancing.

    Parameters
    ----------
    z : ZoneData
        Marginals and cost matrix.
    tol : float
        Stop once the largest relative marginal violation is ``<= tol``.
    max_iter : int
        Number of full (row + column) sweeps before giving up.

    Raises
    ------
    NonConvergence
        If ``max_iter`` sweeps do not reach ``tol``.
    """
    if tol <= 0:
        raise PreconditionError("tol must be positive")
    logK = _log_kernel(z.c)
    logL, logW = np.log(z.L), np.log(z.W)
    lamW = np.zeros(z.n)
    lamL = np.zeros(z.n)
    residual = np.inf
    for it in range(1, max_iter + 1):
        lamL = logsumexp(logK - lamW[None, :], axis=1) - logL
        lamW = logsumexp(logK - lamL[:, None], axis=0) - logW
        X = primal_from_duals(lamL, lamW, z.c)
        residual = _marginal_residual(X, z.L, z.W)
        if residual <= tol:
            return CorrespondenceMatrix(X, lamL, lamW, float(residual), it)
    raise NonConvergence("matrix balancing did not converge", residual, max_iter)


def check_primal_dual(r: CorrespondenceMatrix, z: ZoneData, tol: float = 1e-10) -> PrimalDualReport:
    """Compare ``r.X`` with the closed form built from its duals, and with the marginals."""
    X = np.asarray(r.X, dtype=float)
    closed = primal_from_duals(np.asarray(r.lambdaL), np.asarray(r.lambdaW), z.c)
    dev = np.abs(X - closed) / np.maximum(np.abs(closed), 1.0)
    cell = np.unravel_index(int(np.argmax(dev)), dev.shape)

    rows = np.abs(X.sum(axis=1) - z.L) / z.L
    cols = np.abs(X.sum(axis=0) - z.W) / z.W
    if rows.max() >= cols.max():
        worst_marginal = ("row", int(np.argmax(rows)))
    else:
        worst_marginal = ("col", int(np.argmax(cols)))
    max_dev = float(dev.max())
    max_marg = float(max(rows.max(), cols.max()))
    return PrimalDualReport(
        max_dual_deviation=max_dev,
        max_marginal_violation=max_marg,
        worst_cell=(int(cell[0]), int(cell[1])),
        worst_marginal=worst_marginal,
        passed=bool(max_dev <= tol and max_marg <= tol),
    )


def gravity_solution(L, W) -> np.ndarray:
    """``L_i W_j / N``: the optimum whenever all costs are equal."""
    L = np.asarray(L, dtype=float)
    W = np.asarray(W, dtype=float)
    return np.outer(L, W) / L.sum()
