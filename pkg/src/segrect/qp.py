"""Small dense quadratic programs over the probability simplex.

Everything here is sized for weight vectors of 11 or 12 entries, so dense
linear algebra and exact active-set iterations are cheap.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import lsq_linear


def project_to_simplex(v) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{w >= 0, sum(w) = 1}`` (sort-based)."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot project a non-finite vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def active_set_qp(H, c, A_eq, b_eq, G, h, x0, tol: float = 1e-12, max_iter: int = 500):
    """Primal active-set method for a strictly convex QP.

    Solves ``min 0.5 x'Hx + c'x`` subject to ``A_eq x = b_eq`` and
    ``G x >= h`` starting from the feasible point ``x0``.  Returns the
    minimiser and the multipliers of the inequality rows.
    """
    H = np.asarray(H, float)
    c = np.asarray(c, float)
    A_eq = np.atleast_2d(np.asarray(A_eq, float))
    G = np.atleast_2d(np.asarray(G, float)) if len(G) else np.zeros((0, c.size))
    h = np.asarray(h, float)
    x = np.array(x0, dtype=float)
    n, m_eq = x.size, A_eq.shape[0]
    working: list[int] = []
    for _ in range(max_iter):
        A = np.vstack([A_eq, G[working]]) if working else A_eq
        k = A.shape[0]
        kkt = np.zeros((n + k, n + k))
        kkt[:n, :n] = H
        kkt[:n, n:] = -A.T
        kkt[n:, :n] = A
        sol = np.linalg.solve(kkt, np.concatenate([-(H @ x + c), np.zeros(k)]))
        p, lam = sol[:n], sol[n:]
        if np.linalg.norm(p, np.inf) <= tol * (1.0 + np.linalg.norm(x, np.inf)):
            mult = lam[m_eq:]
            if mult.size == 0 or mult.min() >= -tol:
                full = np.zeros(G.shape[0])
                full[working] = mult
                return x, np.maximum(full, 0.0)
            working.pop(int(np.argmin(mult)))
            continue
        step, blocking = 1.0, None
        gp = G @ p
        slack = np.maximum(G @ x - h, 0.0)
        for i in np.nonzero(gp < -tol)[0]:
            if i in working:
                continue
            ratio = slack[i] / -gp[i]
            if ratio < step:
                step, blocking = ratio, int(i)
        x = x + step * p
        if blocking is not None:
            working.append(blocking)
    raise RuntimeError("active-set QP did not converge")


def kkt_residual(H, c, A_eq, b_eq, G, h, x, active_tol: float = 1e-9) -> float:
    """Largest violation of the KKT conditions at ``x``.

    Multipliers for equalities (free) and near-active inequalities (``>= 0``)
    are fitted by bounded least squares; the residual combines stationarity,
    primal feasibility and complementarity.
    """
    H = np.asarray(H, float)
    c = np.asarray(c, float)
    A_eq = np.atleast_2d(np.asarray(A_eq, float))
    G = np.atleast_2d(np.asarray(G, float)) if len(G) else np.zeros((0, c.size))
    h = np.asarray(h, float)
    x = np.asarray(x, float)
    grad = H @ x + c
    slack = G @ x - h
    act = np.nonzero(slack <= active_tol)[0]
    A = np.vstack([A_eq, G[act]])
    lower = np.concatenate([np.full(A_eq.shape[0], -np.inf), np.zeros(act.size)])
    upper = np.full(A.shape[0], np.inf)
    fit = lsq_linear(A.T, grad, bounds=(lower, upper), method="bvls", tol=1e-15)
    mult = fit.x
    stationarity = np.max(np.abs(A.T @ mult - grad), initial=0.0)
    primal = max(np.max(np.abs(A_eq @ x - b_eq), initial=0.0), np.max(-slack, initial=0.0))
    comp = np.max(np.abs(mult[A_eq.shape[0]:] * slack[act]), initial=0.0)
    return float(max(stationarity, primal, comp))


@dataclass
class MasterSolution:
    w: np.ndarray
    slacks: np.ndarray
    objective: float
    iterations: int


def master_objective(w, planes_a, planes_d, groups, n_samples: int, penalty: float) -> tuple[float, np.ndarray]:
    """Objective ``0.5|w|^2 + penalty * sum_k xi_k`` with slacks at their optimal values."""
    xi = np.zeros(n_samples)
    if len(planes_d):
        viol = planes_d - planes_a @ w
        np.maximum.at(xi, groups, viol)
    return 0.5 * float(w @ w) + penalty * float(xi.sum()), xi


def solve_master_qp(planes_a, planes_d, groups, n_samples: int, penalty: float,
                    w0=None, dim: int | None = None, tol: float = 1e-13,
                    max_iter: int = 10000) -> MasterSolution:
    """Exact solve of the margin-rescaled structured SVM master problem.

    ``min 0.5|w|^2 + penalty * sum_k xi_k`` over the simplex with
    ``xi_k >= planes_d[n] - planes_a[n] . w`` for every plane ``n`` of sample
    ``k = groups[n]`` and ``xi_k >= 0``.  ``dim`` is only needed when there
    are no planes and no starting point.

    The bound ``xi_k >= 0`` is handled as an extra plane with zero normal.
    Each sample keeps at least one tight plane in its working set, which pins
    ``xi_k`` to a function of ``w``; the remaining tight planes and the active
    lower bounds on ``w`` become linear equalities on the search direction, so
    every subproblem lives in ``w``-space only.
    """
    if dim is None:
        dim = np.size(w0) if w0 is not None else np.shape(planes_a)[-1]
    planes_a = np.asarray(planes_a, float).reshape(-1, dim)
    planes_d = np.asarray(planes_d, float).reshape(-1)
    groups = np.asarray(groups, dtype=np.int64).reshape(-1)
    n = planes_a.shape[1]
    a = np.vstack([planes_a, np.zeros((n_samples, n))])
    d = np.concatenate([planes_d, np.zeros(n_samples)])
    grp = np.concatenate([groups, np.arange(n_samples)])
    members = [np.nonzero(grp == k)[0] for k in range(n_samples)]

    w = np.full(n, 1.0 / n) if w0 is None else np.array(w0, dtype=float)
    at_zero = w <= 0.0
    w[at_zero] = 0.0
    if at_zero.all():
        raise ValueError("starting point must lie on the simplex")
    w /= w.sum()
    tight: list[list[int]] = []
    for k in range(n_samples):
        idx = members[k]
        tight.append([int(idx[np.argmax(d[idx] - a[idx] @ w)])])

    scale = 1.0 + penalty * max(1.0, float(np.abs(a).max(initial=0.0)))
    for it in range(max_iter):
        reps = np.array([s[0] for s in tight])
        rows = [np.ones(n)]
        rows += [np.eye(n)[i] for i in np.nonzero(at_zero)[0]]
        extra = [(k, j) for k, s in enumerate(tight) for j in s[1:]]
        rows += [a[j] - a[tight[k][0]] for k, j in extra]
        E = np.array(rows)
        gvec = w - penalty * a[reps].sum(axis=0)
        y, *_ = np.linalg.lstsq(E.T, gvec, rcond=None)
        p = E.T @ y - gvec
        n_zero = int(at_zero.sum())
        if np.linalg.norm(p, np.inf) <= tol * scale:
            mu = y[1 : 1 + n_zero]
            alpha = y[1 + n_zero :]
            rep_alpha = np.full(n_samples, penalty)
            for (k, _), val in zip(extra, alpha):
                rep_alpha[k] -= val
            worst, kind, where = -tol * scale, None, None
            if mu.size and mu.min() < worst:
                worst, kind, where = mu.min(), "bound", int(np.nonzero(at_zero)[0][np.argmin(mu)])
            if alpha.size and alpha.min() < worst:
                worst, kind, where = alpha.min(), "plane", extra[int(np.argmin(alpha))]
            if rep_alpha.min() < worst:
                worst, kind, where = rep_alpha.min(), "rep", int(np.argmin(rep_alpha))
            if kind is None:
                obj, xi = master_objective(w, planes_a, planes_d, groups, n_samples, penalty)
                return MasterSolution(w, xi, obj, it)
            if kind == "bound":
                at_zero[where] = False
            elif kind == "plane":
                tight[where[0]].remove(where[1])
            else:
                tight[where].pop(0)
            continue

        step, block = 1.0, None
        free = np.nonzero(~at_zero & (p < 0))[0]
        if free.size:
            ratios = w[free] / -p[free]
            j = int(np.argmin(ratios))
            if ratios[j] < step:
                step, block = float(ratios[j]), ("bound", int(free[j]))
        xi_now = d[reps] - a[reps] @ w
        ap = a @ p
        ds = ap - ap[reps][grp]
        slack = np.maximum(xi_now[grp] + a @ w - d, 0.0)
        in_tight = np.zeros(a.shape[0], dtype=bool)
        for s in tight:
            in_tight[s] = True
        cand = np.nonzero(~in_tight & (ds < -tol * scale))[0]
        if cand.size:
            ratios = slack[cand] / -ds[cand]
            j = int(np.argmin(ratios))
            if ratios[j] < step:
                step, block = float(ratios[j]), ("plane", int(cand[j]))
        w = w + step * p
        w[at_zero] = 0.0
        if block is not None:
            if block[0] == "bound":
                at_zero[block[1]] = True
                w[block[1]] = 0.0
            else:
                tight[grp[block[1]]].append(block[1])
    raise RuntimeError("master QP active-set iteration limit reached")
