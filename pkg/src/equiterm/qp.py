"""Dense primal active-set solver for convex quadratic programs.

    min 1/2 x'Gx + g'x   s.t.   Ax = a,   Bx <= b

with G symmetric positive semidefinite.  Each iteration solves the
equality-constrained subproblem on the current working set through an
eigendecomposition of the reduced Hessian, which separates positive-
curvature directions from flat ones (the production block of a producer
carries no risk term).  A flat direction with negative slope is followed
to the nearest blocking constraint; the trading boxes keep every such ray
finite.  Exact working sets are the point of the method: downstream
sensitivity analysis differentiates the solution map piece by piece.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError, NumericalError

__all__ = ["QPResult", "solve_qp_active_set"]


@dataclass(frozen=True)
class QPResult:
    x: np.ndarray
    eq_duals: np.ndarray
    ineq_duals: np.ndarray
    working_set: tuple[int, ...]
    iterations: int


def _null_space_basis(C: np.ndarray, n: int) -> np.ndarray:
    if C.shape[0] == 0:
        return np.eye(n)
    u, s, vt = np.linalg.svd(C, full_matrices=True)
    tol = max(C.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    return vt[rank:].T


def solve_qp_active_set(
    G: np.ndarray,
    g: np.ndarray,
    A: np.ndarray,
    a: np.ndarray,
    B: np.ndarray,
    b: np.ndarray,
    x0: np.ndarray,
    working_set=(),
    feas_tol: float = 1e-8,
    dual_tol: float = 1e-11,
    max_iter: int | None = None,
) -> QPResult:
    """Minimize from the feasible point ``x0``.

    ``working_set`` seeds the active inequalities (warm start); rows not
    actually active at ``x0`` are dropped silently.  Raises
    ``InfeasibleError`` when ``x0`` violates the constraints and
    ``NumericalError`` when the iteration or an unbounded ray gives out.
    """
    G = np.asarray(G, dtype=float)
    g = np.asarray(g, dtype=float)
    A = np.asarray(A, dtype=float).reshape(-1, G.shape[0])
    a = np.asarray(a, dtype=float).reshape(-1)
    B = np.asarray(B, dtype=float).reshape(-1, G.shape[0])
    b = np.asarray(b, dtype=float).reshape(-1)
    n, m_eq, m_in = G.shape[0], A.shape[0], B.shape[0]
    x = np.array(x0, dtype=float)

    row_scale = np.maximum(1.0, np.abs(b))
    act_tol = feas_tol * row_scale

    if m_eq and float(np.max(np.abs(A @ x - a))) > feas_tol * max(1.0, float(np.max(np.abs(a))) if a.size else 1.0):
        raise InfeasibleError("starting point violates the equality constraints")
    slack = b - B @ x if m_in else np.zeros(0)
    if m_in and float(np.min(slack + act_tol)) < 0.0:
        raise InfeasibleError("starting point violates the inequality constraints")

    work = list(dict.fromkeys(
        i for i in working_set if 0 <= i < m_in and slack[i] <= act_tol[i]
    ))

    if max_iter is None:
        max_iter = 50 * (n + m_in) + 200
    grad_scale = max(1.0, float(np.max(np.abs(g))) if g.size else 1.0)
    lin_tol = 1e-9 * grad_scale

    for it in range(max_iter):
        C = np.vstack([A, B[work]]) if (m_eq or work) else np.zeros((0, n))
        Z = _null_space_basis(C, n)
        grad = G @ x + g
        # the reduced gradient cannot be resolved below roundoff at the data
        # scale, so stationarity is relative to the gradient magnitude
        grad_scale = max(1.0, float(np.max(np.abs(grad), initial=0.0)))

        d = np.zeros(n)
        target = 1.0
        stationary = True
        if Z.shape[1]:
            H = Z.T @ G @ Z
            w, U = np.linalg.eigh(0.5 * (H + H.T))
            cut = max(float(w[-1]), 1.0) * 1e-12
            pos = w > cut
            c_rot = U.T @ (Z.T @ grad)
            flat = c_rot.copy()
            flat[pos] = 0.0
            if float(np.max(np.abs(c_rot), initial=0.0)) <= 1e-12 * grad_scale:
                stationary = True
            elif float(np.max(np.abs(flat), initial=0.0)) > max(lin_tol, 1e-12 * grad_scale):
                # zero-curvature descent ray; a box must block it
                d = -Z @ (U @ flat)
                target = np.inf
                stationary = False
            else:
                step = np.zeros_like(c_rot)
                step[pos] = -c_rot[pos] / w[pos]
                d = Z @ (U @ step)
                target = 1.0
                stationary = float(np.max(np.abs(d), initial=0.0)) <= 1e-13 * max(1.0, float(np.max(np.abs(x))))

        if stationary:
            # stationary on the working set: check multipliers
            if m_eq or work:
                y, *_ = np.linalg.lstsq(C.T, -grad, rcond=None)
                mu = y[:m_eq]
                eta_w = y[m_eq:]
            else:
                mu = np.zeros(0)
                eta_w = np.zeros(0)
            if eta_w.size == 0 or float(eta_w.min()) >= -dual_tol * grad_scale:
                eta = np.zeros(m_in)
                if work:
                    eta[work] = np.where(eta_w > 0.0, eta_w, 0.0)
                return QPResult(x, mu, eta, tuple(sorted(work)), it + 1)
            worst = int(np.argmin(eta_w))
            del work[worst]
            continue

        # ratio test against rows not in the working set
        alpha = target
        blocker = -1
        if m_in:
            Bd = B @ d
            slack = b - B @ x
            pos_tol = 1e-13 * max(1.0, float(np.max(np.abs(d))))
            in_work = np.zeros(m_in, dtype=bool)
            in_work[work] = True
            movable = ~in_work & (Bd > pos_tol)
            if np.any(movable):
                ratios = np.where(movable, np.maximum(slack, 0.0) / np.where(movable, Bd, 1.0), np.inf)
                i_best = int(np.argmin(ratios))
                if ratios[i_best] < alpha - 1e-15:
                    alpha = float(ratios[i_best])
                    blocker = i_best
        if not np.isfinite(alpha):
            raise NumericalError("descent ray is unbounded; feasible set not compact")
        x = x + alpha * d
        if blocker >= 0:
            work.append(blocker)

    raise NumericalError(f"active-set iteration limit {max_iter} exceeded")
