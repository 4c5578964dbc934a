"""Numerical primitives for closed-loop attack analysis.

Steady-state Riccati and Lyapunov solvers, definiteness and rank tests, and the
Gaussian exceedance probability used by the impact metrics. Everything here is
a pure function of its arguments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

# Relative tolerances shared across the package.
PD_RTOL = 1e-10
RANK_RTOL = 1e-9

_DARE_TOL = 1e-10
_DARE_MAX_ITER = 100_000
_KRON_LIMIT = 20


class NonConvergence(RuntimeError):
    """An iterative solver failed to reach its tolerance within the cap."""


class UnstableClosedLoop(ValueError):
    """The estimator closed loop has spectral radius >= 1."""


class UnstableMatrix(ValueError):
    """A matrix required to be Schur stable is not."""


class DegenerateVariance(ValueError):
    """A standard deviation or variance that must be positive is not."""


class NotPositiveDefinite(ValueError):
    """A matrix required to be positive definite is not."""


@dataclass(frozen=True)
class SpdCheck:
    is_positive_definite: bool
    min_eigenvalue: float


def spd_check(M: np.ndarray) -> SpdCheck:
    """Symmetric positive-definiteness test with a relative eigenvalue guard.

    A matrix passes when its minimum eigenvalue exceeds
    PD_RTOL * max(1, max eigenvalue).
    """
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return SpdCheck(True, np.inf)
    w = np.linalg.eigvalsh(0.5 * (M + M.T))
    lo, hi = float(w[0]), float(w[-1])
    return SpdCheck(lo > PD_RTOL * max(1.0, hi), lo)


def spectral_radius(M: np.ndarray) -> float:
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def solve_dare(
    A: np.ndarray,
    C: np.ndarray,
    sigma_v: np.ndarray,
    sigma_w: np.ndarray,
    tol: float = _DARE_TOL,
    max_iter: int = _DARE_MAX_ITER,
) -> np.ndarray:
    """Steady-state estimation-error covariance by fixed-point iteration.

    Iterates P <- A P A' + sigma_v - A P C' (C P C' + sigma_w)^-1 C P A'
    from P = sigma_v until the relative Frobenius update drops below `tol`.
    The result is verified against the defining equation before returning.
    """
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    P = np.asarray(sigma_v, dtype=float).copy()
    for _ in range(max_iter):
        S = C @ P @ C.T + sigma_w
        APCt = A @ P @ C.T
        P_next = A @ P @ A.T + sigma_v - APCt @ np.linalg.solve(S, APCt.T)
        P_next = 0.5 * (P_next + P_next.T)
        if np.linalg.norm(P_next - P, "fro") <= tol * max(1.0, np.linalg.norm(P_next, "fro")):
            P = P_next
            break
        P = P_next
    else:
        raise NonConvergence(f"Riccati fixed point not converged in {max_iter} iterations")
    if dare_residual(A, C, sigma_v, sigma_w, P) > 1e-9:
        raise NonConvergence("Riccati residual above 1e-9 after convergence")
    return P


def dare_residual(A, C, sigma_v, sigma_w, sigma_e) -> float:
    """Relative Frobenius residual of the steady-state Riccati equation."""
    S = C @ sigma_e @ C.T + sigma_w
    APCt = A @ sigma_e @ C.T
    rhs = A @ sigma_e @ A.T + sigma_v - APCt @ np.linalg.solve(S, APCt.T)
    return float(
        np.linalg.norm(sigma_e - rhs, "fro") / max(1.0, np.linalg.norm(sigma_e, "fro"))
    )


def kalman_gain(
    A: np.ndarray, C: np.ndarray, sigma_e: np.ndarray, sigma_w: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Steady-state gain K and innovation covariance from the error covariance.

    Raises UnstableClosedLoop when rho(A - K C) >= 1, which signals violated
    model assumptions rather than a numerical problem.
    """
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    sigma_r = C @ sigma_e @ C.T + sigma_w
    sigma_r = 0.5 * (sigma_r + sigma_r.T)
    K = np.linalg.solve(sigma_r, (A @ sigma_e @ C.T).T).T
    rho = spectral_radius(A - K @ C)
    if rho >= 1.0:
        raise UnstableClosedLoop(f"estimator loop unstable: spectral radius {rho:.6f}")
    return K, sigma_r


def solve_lyapunov(A_e: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Solve S = A_e S A_e' + Q for Schur-stable A_e.

    Uses the Kronecker-product linear system for n <= 20 and a doubling
    iteration (S accumulates, A_e squares) above that.
    """
    A_e = np.asarray(A_e, dtype=float)
    Q = np.asarray(Q, dtype=float)
    n = A_e.shape[0]
    rho = spectral_radius(A_e)
    if rho >= 1.0:
        raise UnstableMatrix(f"spectral radius {rho:.6f} >= 1")
    if n <= _KRON_LIMIT:
        # vec_C(A S A') = (A kron A) vec_C(S) in row-major vectorization
        lhs = np.eye(n * n) - np.kron(A_e, A_e)
        S = np.linalg.solve(lhs, Q.reshape(-1)).reshape(n, n)
        return 0.5 * (S + S.T)
    S = Q.copy()
    M = A_e.copy()
    for _ in range(200):
        inc = M @ S @ M.T
        S = S + inc
        if np.linalg.norm(inc, "fro") <= 1e-16 * max(1.0, np.linalg.norm(S, "fro")):
            return 0.5 * (S + S.T)
        M = M @ M
    raise NonConvergence("Lyapunov doubling iteration did not converge")


def lyapunov_residual(A_e, Q, S) -> float:
    return float(
        np.linalg.norm(S - A_e @ S @ A_e.T - Q, "fro") / max(1.0, np.linalg.norm(S, "fro"))
    )


def sym_sqrt(M: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition."""
    M = np.asarray(M, dtype=float)
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    w = np.clip(w, 0.0, None)
    return V @ np.diag(np.sqrt(w)) @ V.T


def sym_inv_sqrt(M: np.ndarray) -> np.ndarray:
    """Symmetric inverse square root; requires positive definiteness."""
    M = np.asarray(M, dtype=float)
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    if w[0] <= PD_RTOL * max(1.0, float(w[-1])):
        raise NotPositiveDefinite(f"minimum eigenvalue {w[0]:.3e}")
    return V @ np.diag(w**-0.5) @ V.T


def gaussian_exceed(mu, sigma):
    """P(|Z| > 1) for Z ~ N(mu, sigma^2).

    Evaluated as 0.5 erfc((1-mu)/(sigma sqrt(2))) + 0.5 erfc((1+mu)/(sigma sqrt(2))),
    accurate to ~1e-15 absolute. Accepts scalars or arrays (broadcast).
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0.0):
        raise DegenerateVariance("sigma must be positive")
    root2 = np.sqrt(2.0)
    p = 0.5 * erfc((1.0 - mu) / (sigma * root2)) + 0.5 * erfc((1.0 + mu) / (sigma * root2))
    if p.ndim == 0:
        return float(p)
    return p


def matrix_rank(M: np.ndarray) -> int:
    """Rank with singular values >= RANK_RTOL * largest counting."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s >= RANK_RTOL * s[0]))


def null_basis(M: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) of the null space of M."""
    M = np.asarray(M, dtype=float)
    n = M.shape[1]
    if M.shape[0] == 0 or M.size == 0:
        return np.eye(n)
    _, s, vt = np.linalg.svd(M)
    if s.size == 0 or s[0] == 0.0:
        rank = 0
    else:
        rank = int(np.count_nonzero(s >= RANK_RTOL * s[0]))
    return vt[rank:].T


def row_space_basis(M: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) of the row space of M."""
    M = np.asarray(M, dtype=float)
    n = M.shape[1]
    if M.shape[0] == 0 or M.size == 0:
        return np.zeros((n, 0))
    _, s, vt = np.linalg.svd(M)
    if s.size == 0 or s[0] == 0.0:
        rank = 0
    else:
        rank = int(np.count_nonzero(s >= RANK_RTOL * s[0]))
    return vt[:rank].T


def null_space_contained(A: np.ndarray, B: np.ndarray) -> bool:
    """True iff null(A) is contained in null(B), up to the rank tolerance.

    Implemented by projecting B onto an orthonormal null basis of A; this is
    the rank([A;B]) = rank(A) predicate in a form that is immune to scale
    mismatch between the two blocks.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape[1] != B.shape[1]:
        raise ValueError("column counts differ")
    Z = null_basis(A)
    if Z.shape[1] == 0:
        return True
    if B.shape[0] == 0:
        return True
    leak = np.linalg.norm(B @ Z, 2)
    scale = max(1.0, np.linalg.norm(B, 2))
    return bool(leak <= RANK_RTOL * scale)
