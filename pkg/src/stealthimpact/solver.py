"""Per-index convex solves and impact aggregation.

Each row i of the critical map T_Z defines one program: maximize T_Z(i,:) d
over the symmetric feasible set {|Q d|_inf <= 1, d' M'M d <= radius, F d = 0}.
Because the set is symmetric and the exceedance probability of N(mu, sigma^2)
outside [-1, 1] is even and increasing in |mu|, maximizing the mean maximizes
the probability, so the worst exceedance probability is max_i P_i and the
worst expected infinity norm is lower-bounded by max_i mu_i.

The solve runs a log-barrier interior-point method after eliminating the
equalities through an orthonormal null-space basis and restricting to the row
space of the remaining constraint maps (directions outside it either leave the
objective flat or certify unboundedness).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import numcore
from .attacks import DecisionLayout
from .distrib import GaussianSummary

KKT_TOL = 1e-6
CONSTRAINT_SLACK = 1e-7
_GAP_TARGET = 1e-7
_DECREMENT_TOL = 1e-13
_POLISH_DECREMENT = 1e-15
_T_MULT = 20.0
_MAX_NEWTON = 200
_RADIUS_FLOOR = 1e-12


class Infeasible(RuntimeError):
    """The stealthiness radius is negative: no decision vector is feasible."""


class NumericalFailure(RuntimeError):
    """The interior-point solve did not reach its optimality certificate."""


@dataclass
class ConvexProblem:
    """One linear-objective program over the symmetric feasible set.

    maximize c' d  subject to  |q_box d|_inf <= 1,
                               d' m_quad' m_quad d <= radius,
                               f_eq d = 0.
    """

    c: np.ndarray
    q_box: np.ndarray
    m_quad: np.ndarray
    f_eq: np.ndarray
    radius: float


@dataclass
class SolveResult:
    d_star: np.ndarray
    mu: float
    status: str  # optimal | infeasible | unbounded
    kkt_residual: float
    newton_iters: int


@dataclass
class ImpactReport:
    """Per-index solve outcomes plus the two aggregate impact metrics."""

    mu: np.ndarray
    sigma: np.ndarray
    p_exceed: np.ndarray
    d_star: np.ndarray
    exceed_prob: float
    mean_lower: float
    argmax_exceed: Optional[int]
    argmax_mean: Optional[int]
    feasible: bool
    unbounded: bool
    eps_prime: float
    kkt_residual: float
    newton_iters: int


def eliminate_equalities(f_eq: np.ndarray, dim_d: int) -> np.ndarray:
    """Orthonormal basis of the equality null space: d = Z xi spans {F d = 0}."""
    f_eq = np.asarray(f_eq, dtype=float)
    if f_eq.size == 0:
        return np.eye(dim_d)
    if f_eq.shape[1] != dim_d:
        raise ValueError(f"equality map has {f_eq.shape[1]} columns, expected {dim_d}")
    return numcore.null_basis(f_eq)


class _Geometry:
    """Shared factorization of the feasible set, reused across objective rows.

    Coordinates: d = basis @ eta where basis stacks the equality null space
    with the row-space restriction. Box rows a_j and quadratic rows m (scaled
    so the constraint reads |m eta|^2 <= 1) live in eta coordinates.
    """

    def __init__(
        self,
        q_box: np.ndarray,
        m_quad: np.ndarray,
        f_eq: np.ndarray,
        radius: float,
        dim_d: int,
    ) -> None:
        if radius < 0:
            raise Infeasible(f"negative stealthiness radius {radius:.6e}")
        q_box = np.asarray(q_box, dtype=float).reshape(-1, dim_d)
        m_quad = np.asarray(m_quad, dtype=float).reshape(-1, dim_d)
        f_eq = np.asarray(f_eq, dtype=float).reshape(-1, dim_d)

        z_eq = eliminate_equalities(f_eq, dim_d)
        if radius <= _RADIUS_FLOOR:
            # budget numerically zero: the quadratic cap collapses to the
            # equality m_quad d = 0 and joins the eliminated block
            z_more = numcore.null_basis(m_quad @ z_eq)
            z_eq = z_eq @ z_more
            m_red = None
        else:
            m_red = (m_quad @ z_eq) / math.sqrt(radius)
        a_red = q_box @ z_eq

        stack = a_red if m_red is None else np.vstack([a_red, m_red])
        w = numcore.row_space_basis(stack)
        self.z_eq = z_eq
        self.basis = z_eq @ w
        self.a_rows = a_red @ w
        self.m_rows = None if m_red is None else m_red @ w
        self.dim_d = dim_d
        self.n_eta = w.shape[1]
        self.n_ineq = 2 * self.a_rows.shape[0] + (0 if self.m_rows is None else 1)

    def objective(self, c: np.ndarray) -> tuple[np.ndarray, bool]:
        """Reduced objective and whether it is bounded over the feasible set.

        The component of c (restricted to the equality null space) outside the
        constraint row space is a feasible ascent ray, so the program is
        unbounded exactly when that component is nonzero.
        """
        c_xi = self.z_eq.T @ np.asarray(c, dtype=float)
        c_eta = self.basis.T @ np.asarray(c, dtype=float)
        resid = c_xi - (self.z_eq.T @ self.basis) @ c_eta
        bounded = np.linalg.norm(resid) <= numcore.RANK_RTOL * max(
            1.0, np.linalg.norm(c_xi)
        )
        return c_eta, bounded


def _barrier_terms(geom: _Geometry, eta: np.ndarray):
    """Slacks (positive iff strictly feasible) and quadratic-term state."""
    ax = geom.a_rows @ eta
    s_minus = 1.0 - ax
    s_plus = 1.0 + ax
    if geom.m_rows is None:
        return ax, s_minus, s_plus, None, 1.0
    me = geom.m_rows @ eta
    s_quad = 1.0 - float(me @ me)
    return ax, s_minus, s_plus, me, s_quad


def _gradient(geom: _Geometry, c_hat: np.ndarray, t: float, eta: np.ndarray) -> np.ndarray:
    ax, s_minus, s_plus, me, s_quad = _barrier_terms(geom, eta)
    grad = -t * c_hat + geom.a_rows.T @ (1.0 / s_minus - 1.0 / s_plus)
    if geom.m_rows is not None:
        grad = grad + (2.0 / s_quad) * (geom.m_rows.T @ me)
    return grad


def _newton_step(hess: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Solve hess step = -grad with Jacobi scaling for conditioning."""
    d = np.sqrt(np.clip(np.diag(hess), 1e-300, None))
    scaled = hess / d[:, None] / d[None, :]
    scaled = 0.5 * (scaled + scaled.T)
    rhs = -grad / d
    try:
        y = np.linalg.solve(scaled, rhs)
    except np.linalg.LinAlgError:
        y = np.linalg.lstsq(scaled, rhs, rcond=None)[0]
    return y / d


def _phi(geom: _Geometry, c_hat: np.ndarray, t: float, eta: np.ndarray) -> float:
    ax, s_minus, s_plus, me, s_quad = _barrier_terms(geom, eta)
    if np.any(s_minus <= 0) or np.any(s_plus <= 0) or s_quad <= 0:
        return math.inf
    val = -t * float(c_hat @ eta) - float(np.sum(np.log(s_minus)) + np.sum(np.log(s_plus)))
    if geom.m_rows is not None:
        val -= math.log(s_quad)
    return val


def _newton_center(
    geom: _Geometry, c_hat: np.ndarray, t: float, eta: np.ndarray, decrement_tol: float
) -> tuple[np.ndarray, np.ndarray, int]:
    """Minimize -t c'eta + barrier from a strictly feasible start."""
    a = geom.a_rows
    m = geom.m_rows
    iters = 0
    for _ in range(_MAX_NEWTON):
        ax, s_minus, s_plus, me, s_quad = _barrier_terms(geom, eta)
        inv_m = 1.0 / s_minus
        inv_p = 1.0 / s_plus
        grad = -t * c_hat + a.T @ (inv_m - inv_p)
        hess = (a * (inv_m**2 + inv_p**2)[:, None]).T @ a
        if m is not None:
            mtme = m.T @ me
            grad = grad + (2.0 / s_quad) * mtme
            hess = hess + (2.0 / s_quad) * (m.T @ m) + (4.0 / s_quad**2) * np.outer(
                mtme, mtme
            )
        step = _newton_step(hess, grad)
        slope = float(grad @ step)
        if slope >= 0.0:  # numerically noisy solve; fall back to steepest descent
            step = -grad
            slope = -float(grad @ grad)
        if -0.5 * slope <= decrement_tol:
            return eta, grad, iters
        phi = _phi(geom, c_hat, t, eta)
        moved = False
        for step_try, slope_try in ((step, slope), (-grad, -float(grad @ grad))):
            alpha = 1.0
            for _ in range(60):
                cand = eta + alpha * step_try
                phi2 = _phi(geom, c_hat, t, cand)
                if phi2 <= phi + 0.25 * alpha * slope_try:
                    eta = cand
                    moved = True
                    break
                alpha *= 0.5
            if moved:
                break
        if not moved:
            return eta, grad, iters  # no float-representable progress; caller audits
        iters += 1
    return eta, _gradient(geom, c_hat, t, eta), iters


def _solve_reduced(geom: _Geometry, c_eta: np.ndarray) -> tuple[np.ndarray, float, int]:
    """Barrier loop in reduced coordinates; returns (eta, kkt_residual, iters).

    The stationarity residual that float64 can certify has a noise floor that
    grows with t (slack cancellation), so the loop keeps the best certified
    stage and stops climbing t once the residual turns back up.
    """
    scale = float(np.linalg.norm(c_eta))
    c_hat = c_eta / scale
    eta = np.zeros(geom.n_eta)
    m_total = max(geom.n_ineq, 1)
    t = float(m_total)
    total_iters = 0
    best_kkt = math.inf
    best_eta = eta
    best_t = t
    while True:
        eta, grad, iters = _newton_center(geom, c_hat, t, eta, _DECREMENT_TOL)
        total_iters += iters
        kkt = float(np.max(np.abs(grad))) / t + m_total / t
        if kkt < best_kkt:
            best_kkt, best_eta, best_t = kkt, eta.copy(), t
        if m_total / t <= _GAP_TARGET or kkt > 4.0 * best_kkt:
            break
        t *= _T_MULT
    eta, grad, iters = _newton_center(geom, c_hat, best_t, best_eta, _POLISH_DECREMENT)
    total_iters += iters
    kkt = float(np.max(np.abs(grad))) / best_t + m_total / best_t
    if kkt < best_kkt:
        best_kkt, best_eta = kkt, eta
    return best_eta, best_kkt, total_iters


def _solve_with_geometry(geom: _Geometry, c: np.ndarray) -> SolveResult:
    c = np.asarray(c, dtype=float)
    c_eta, bounded = geom.objective(c)
    if not bounded:
        return SolveResult(
            d_star=np.zeros(geom.dim_d),
            mu=math.inf,
            status="unbounded",
            kkt_residual=math.nan,
            newton_iters=0,
        )
    if np.linalg.norm(c_eta) == 0.0:
        return SolveResult(
            d_star=np.zeros(geom.dim_d),
            mu=0.0,
            status="optimal",
            kkt_residual=0.0,
            newton_iters=0,
        )
    eta, kkt, iters = _solve_reduced(geom, c_eta)
    if not math.isfinite(kkt) or kkt > KKT_TOL:
        raise NumericalFailure(
            f"optimality certificate not met: kkt residual {kkt:.3e} > {KKT_TOL:.0e}"
        )
    d_star = geom.basis @ eta
    mu = float(c @ d_star)
    return SolveResult(
        d_star=d_star, mu=mu, status="optimal", kkt_residual=kkt, newton_iters=iters
    )


def solve_qclp(problem: ConvexProblem) -> SolveResult:
    """Solve one program; raises Infeasible when the radius is negative."""
    dim_d = np.asarray(problem.c).shape[-1]
    geom = _Geometry(problem.q_box, problem.m_quad, problem.f_eq, problem.radius, dim_d)
    return _solve_with_geometry(geom, np.asarray(problem.c, dtype=float))


def _empty_report(feasible: bool, unbounded: bool, n_rows: int, dim_d: int, eps_prime: float, sigma: np.ndarray) -> ImpactReport:
    fill = math.nan if unbounded else 0.0
    return ImpactReport(
        mu=np.full(n_rows, fill),
        sigma=sigma,
        p_exceed=np.full(n_rows, fill),
        d_star=np.zeros((n_rows, dim_d)),
        exceed_prob=1.0 if unbounded else 0.0,
        mean_lower=math.inf if unbounded else 0.0,
        argmax_exceed=None,
        argmax_mean=None,
        feasible=feasible,
        unbounded=unbounded,
        eps_prime=eps_prime,
        kkt_residual=0.0,
        newton_iters=0,
    )


def compute_impact(
    summary: GaussianSummary,
    layout: DecisionLayout,
    max_workers: Optional[int] = None,
) -> ImpactReport:
    """Run the per-index solves over every critical row and aggregate.

    Shortcut paths: a residual covariance that is not positive definite, or a
    negative stealthiness radius, means no attack satisfies the budget and the
    impact is zero by convention. A failed boundedness audit with a
    nonnegative radius means the impact grows without bound: the probability
    metric saturates at 1 and the mean metric is reported as infinity.
    """
    n_rows = summary.t_z.shape[0]
    dim_d = layout.dim_d
    sigma = np.sqrt(np.diag(summary.sigma_z))
    if not summary.residual_cov_pd or summary.eps_prime < 0:
        return _empty_report(False, False, n_rows, dim_d, summary.eps_prime, sigma)
    if not summary.impact_bounded:
        return _empty_report(True, True, n_rows, dim_d, summary.eps_prime, sigma)

    geom = _Geometry(layout.Q, summary.t_r, layout.F, summary.eps_prime, dim_d)

    def solve_row(i: int) -> SolveResult:
        return _solve_with_geometry(geom, summary.t_z[i])

    if max_workers is not None and max_workers > 1 and n_rows > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(solve_row, range(n_rows)))
    else:
        results = [solve_row(i) for i in range(n_rows)]

    if any(r.status == "unbounded" for r in results):
        return _empty_report(True, True, n_rows, dim_d, summary.eps_prime, sigma)

    mu = np.array([r.mu for r in results])
    d_star = np.vstack([r.d_star for r in results])
    p = np.asarray(numcore.gaussian_exceed(mu, sigma))
    argmax_p = int(np.argmax(p))
    argmax_mu = int(np.argmax(mu))
    return ImpactReport(
        mu=mu,
        sigma=sigma,
        p_exceed=p,
        d_star=d_star,
        exceed_prob=float(p[argmax_p]),
        mean_lower=float(mu[argmax_mu]),
        argmax_exceed=argmax_p,
        argmax_mean=argmax_mu,
        feasible=True,
        unbounded=False,
        eps_prime=summary.eps_prime,
        kkt_residual=max(r.kkt_residual for r in results),
        newton_iters=sum(r.newton_iters for r in results),
    )


def mean_impact_lower(report: ImpactReport) -> float:
    """Lower bound on the expected worst critical excursion for the report."""
    if not report.feasible:
        return 0.0
    if report.unbounded:
        return math.inf
    return report.mean_lower
