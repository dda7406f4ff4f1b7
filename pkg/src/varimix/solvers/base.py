"""Shared solver machinery.

The fully constrained least squares core solves, per pixel,

    min ||y - M a||^2   subject to  a >= 0,  sum(a) = 1

with an operator-splitting (ADMM) iteration whose projection step uses
the sort-based simplex projection, followed by an active-set polish that
drives the KKT residual to machine precision. The polish groups pixels by
support pattern so everything stays vectorized.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..types import AbundanceMap, EndmemberField

_SUPPORT_TOL = 1e-9
_KKT_TOL = 1e-10
_MAX_POLISH_ROUNDS = 40


@dataclass(frozen=True)
class SolverOptions:
    """Knobs shared by the unmixing solvers; unused fields are ignored."""

    max_iters: int = 200            # outer iterations (alternating solvers)
    tol: float = 1e-6               # relative cost change stopping rule
    rho: Optional[float] = None     # splitting penalty; None = auto-scaled
    lambda_sparse: float = 1e-3     # L1 penalty weight
    lambda_m: float = 1.0           # endmember tie penalty (scaled model)
    lambda_psi: float = 0.1         # spatial smoothness of scaling factors
    gamma_plmm: float = 1.0         # perturbation Frobenius penalty
    seed: int = 0
    inner_tol: float = 1e-8         # ADMM residual tolerance
    inner_iters: int = 2000         # ADMM iteration cap

    def __post_init__(self):
        for name in ("max_iters", "inner_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("tol", "lambda_m", "lambda_psi", "gamma_plmm", "inner_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lambda_sparse < 0:
            raise ValueError("lambda_sparse must be nonnegative")
        if self.rho is not None and self.rho <= 0:
            raise ValueError("rho must be positive")


@dataclass
class SolverLog:
    iterations: int = 0
    final_cost: float = 0.0
    converged: bool = True
    wall_time_s: float = 0.0
    cost_history: tuple = ()
    flags: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_cost": self.final_cost,
            "converged": self.converged,
            "wall_time_s": self.wall_time_s,
            "cost_history": list(self.cost_history),
            "flags": self.flags,
        }


@dataclass
class UnmixingResult:
    """Everything a solver emits for one image."""

    abundances: AbundanceMap
    per_pixel_re: np.ndarray                    # (N,) RMS residual per pixel
    reconstruction: np.ndarray                  # (N, L) fitted pixels
    solver_log: SolverLog
    endmembers: Optional[EndmemberField] = None
    selected_model: Optional[np.ndarray] = None  # (N, P) per-class variant index
    raw_abundances: Optional[AbundanceMap] = None
    extras: dict = field(default_factory=dict)


def per_pixel_rms(y: np.ndarray, reconstruction: np.ndarray) -> np.ndarray:
    """Root mean square residual per pixel, ||y_n - yhat_n|| / sqrt(L)."""
    return np.linalg.norm(y - reconstruction, axis=1) / np.sqrt(y.shape[1])


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row onto the probability simplex
    (sort-based algorithm)."""
    v = np.atleast_2d(v)
    n, p = v.shape
    u = -np.sort(-v, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    denom = np.arange(1, p + 1)
    cond = u > css / denom
    rho = p - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(n), rho] / (rho + 1.0)
    return np.maximum(v - theta[:, None], 0.0)


def _admm_fcls_shared(y, m, rho, tol, max_iters, warm=None):
    n, l = y.shape
    p = m.shape[1]
    gram = 2.0 * (m.T @ m)
    h = 2.0 * (y @ m)                          # (N, P)
    if rho is None:
        rho = float(np.trace(gram)) / p
    # ridge-regularized SPD and tiny: a precomputed inverse makes each
    # iteration a single small matmul
    inv = np.linalg.inv(gram + rho * np.eye(p))
    if warm is None:
        z = np.full((n, p), 1.0 / p)
        u = np.zeros((n, p))
    else:
        z, u = np.array(warm[0]), np.array(warm[1])
    it = 0
    for it in range(1, max_iters + 1):
        x = (h + rho * (z - u)) @ inv
        z_new = project_simplex(x + u)
        r = np.max(np.abs(x - z_new))
        s = rho * np.max(np.abs(z_new - z))
        z = z_new
        u += x - z
        if r <= tol and s <= tol:
            break
    return z, u, it


def _admm_fcls_batched(y, m, rho, tol, max_iters, warm=None):
    n, l, p = m.shape
    gram = 2.0 * np.einsum("nlp,nlq->npq", m, m)
    h = 2.0 * np.einsum("nlp,nl->np", m, y)
    if rho is None:
        rho = float(np.mean(np.trace(gram, axis1=1, axis2=2))) / p
        rho = max(rho, 1e-12)
    inv = np.linalg.inv(gram + rho * np.eye(p)[None])
    if warm is None:
        z = np.full((n, p), 1.0 / p)
        u = np.zeros((n, p))
    else:
        z, u = np.array(warm[0]), np.array(warm[1])
    it = 0
    for it in range(1, max_iters + 1):
        x = np.einsum("npq,nq->np", inv, h + rho * (z - u))
        z_new = project_simplex(x + u)
        r = np.max(np.abs(x - z_new))
        s = rho * np.max(np.abs(z_new - z))
        z = z_new
        u += x - z
        if r <= tol and s <= tol:
            break
    return z, u, it


def _group_kkt_solve(y_grp, m_grp, cols):
    """Solve the equality-constrained LS on support ``cols`` for a group of
    pixels; returns (abundances on support, multiplier)."""
    k = len(cols)
    if m_grp.ndim == 2:                         # shared endmember matrix
        ms = m_grp[:, cols]
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = 2.0 * (ms.T @ ms)
        kkt[:k, k] = -1.0
        kkt[k, :k] = 1.0
        rhs = np.empty((k + 1, y_grp.shape[0]))
        rhs[:k] = 2.0 * (ms.T @ y_grp.T)
        rhs[k] = 1.0
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            kkt[:k, :k] += 1e-10 * np.trace(kkt[:k, :k]) / max(k, 1) * np.eye(k)
            sol = np.linalg.solve(kkt, rhs)
        return sol[:k].T, sol[k]
    ms = m_grp[:, :, cols]                      # per-pixel matrices
    g = y_grp.shape[0]
    kkt = np.zeros((g, k + 1, k + 1))
    kkt[:, :k, :k] = 2.0 * np.einsum("nlp,nlq->npq", ms, ms)
    kkt[:, :k, k] = -1.0
    kkt[:, k, :k] = 1.0
    rhs = np.empty((g, k + 1, 1))
    rhs[:, :k, 0] = 2.0 * np.einsum("nlp,nl->np", ms, y_grp)
    rhs[:, k, 0] = 1.0
    try:
        sol = np.linalg.solve(kkt, rhs)[..., 0]
    except np.linalg.LinAlgError:
        tr = np.trace(kkt[:, :k, :k], axis1=1, axis2=2) / max(k, 1)
        kkt[:, :k, :k] += (1e-10 * tr)[:, None, None] * np.eye(k)[None]
        sol = np.linalg.solve(kkt, rhs)[..., 0]
    return sol[:, :k], sol[:, k]


def _polish_fcls(y, m, z):
    """Active-set refinement started from the splitting iterate."""
    n, p = z.shape
    shared = m.ndim == 2
    if shared:
        gram = 2.0 * (m.T @ m)
        h = 2.0 * (y @ m)
    else:
        gram = 2.0 * np.einsum("nlp,nlq->npq", m, m)
        h = 2.0 * np.einsum("nlp,nl->np", m, y)
    scale = np.maximum(1.0, np.max(np.abs(h), axis=1))
    support = z > _SUPPORT_TOL
    support[~support.any(axis=1), 0] = True
    a = np.array(z)
    nu = np.zeros(n)
    dirty = np.ones(n, dtype=bool)
    for _ in range(_MAX_POLISH_ROUNDS):
        if not dirty.any():
            break
        idx = np.flatnonzero(dirty)
        patterns, inverse = np.unique(support[idx], axis=0, return_inverse=True)
        for gi, pat in enumerate(patterns):
            cols = np.flatnonzero(pat)
            if cols.size == 0:
                continue
            rows = idx[inverse == gi]
            try:
                a_s, nu_g = _group_kkt_solve(
                    y[rows], m if shared else m[rows], cols
                )
            except (np.linalg.LinAlgError, ValueError):
                continue                        # keep splitting iterate
            a[np.ix_(rows, np.arange(p))] = 0.0
            a[np.ix_(rows, cols)] = a_s
            nu[rows] = nu_g
        bad = ~np.isfinite(a).all(axis=1)
        a[bad] = z[bad]
        # drop negative actives, then pull in violated inactives
        neg = (a < -1e-12) & support
        new_dirty = neg.any(axis=1)
        support &= ~neg
        support[~support.any(axis=1), 0] = True
        np.clip(a, 0.0, None, out=a)
        if shared:
            grad = a @ gram - h
        else:
            grad = np.einsum("npq,nq->np", gram, a) - h
        slack = grad - nu[:, None]
        slack[support] = np.inf
        worst = np.argmin(slack, axis=1)
        viol = slack[np.arange(n), worst] < -_KKT_TOL * scale
        viol &= ~new_dirty
        support[viol, worst[viol]] = True
        new_dirty |= viol
        new_dirty &= ~bad
        dirty = new_dirty
    # rows that never settled keep the splitting iterate (already feasible)
    a[dirty] = z[dirty]
    rows_sum = a.sum(axis=1)
    ok = rows_sum > 0.5
    a[ok] /= rows_sum[ok, None]
    a[~ok] = 1.0 / p
    return a


def fcls_core(
    y: np.ndarray,
    m: np.ndarray,
    rho: Optional[float] = None,
    tol: float = 1e-8,
    max_iters: int = 2000,
    polish: bool = True,
    warm_state: Optional[tuple] = None,
    return_state: bool = False,
):
    """Simplex-constrained least squares for all pixels.

    Parameters
    ----------
    y : (N, L) pixels.
    m : (L, P) shared matrix or (N, L, P) per-pixel matrices.
    warm_state : (z, u) splitting state from a previous call on nearby
        data (alternating solvers); ``return_state=True`` hands it back.
    """
    y = np.asarray(y, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if not (np.isfinite(y).all() and np.isfinite(m).all()):
        raise ValueError("non-finite solver inputs")
    if m.ndim == 2:
        z, u, iters = _admm_fcls_shared(y, m, rho, tol, max_iters, warm_state)
    else:
        z, u, iters = _admm_fcls_batched(y, m, rho, tol, max_iters, warm_state)
    a = _polish_fcls(y, m, z) if polish else z
    if return_state:
        return a, iters, (z, u)
    return a, iters


def reconstruct(m: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Fitted pixels for shared (L, P) or per-pixel (N, L, P) matrices."""
    if m.ndim == 2:
        return a @ m.T
    return np.einsum("nlp,np->nl", m, a)


def nnls_core(
    y: np.ndarray,
    m: np.ndarray,
    lam: float = 0.0,
    rho: Optional[float] = None,
    tol: float = 1e-7,
    max_iters: int = 2000,
    polish: bool = True,
) -> tuple[np.ndarray, int]:
    """Nonnegative least squares with a linear sparsity term,

        min 0.5 ||y - M a||^2 + lam * sum(a)   s.t.  a >= 0

    solved per pixel by splitting with a nonnegativity projection, then
    an active-set polish.
    """
    y = np.asarray(y, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    n = y.shape[0]
    q = m.shape[1]
    gram = m.T @ m
    h = y @ m - lam                               # (N, Q) linear term
    if rho is None:
        rho = float(np.trace(gram)) / q
        rho = max(rho, 1e-12)
    inv = np.linalg.inv(gram + rho * np.eye(q))
    z = np.zeros((n, q))
    u = np.zeros((n, q))
    iters = 0
    for iters in range(1, max_iters + 1):
        x = (h + rho * (z - u)) @ inv
        z_new = np.maximum(x + u, 0.0)
        r = np.max(np.abs(x - z_new))
        s = rho * np.max(np.abs(z_new - z))
        z = z_new
        u += x - z
        if r <= tol and s <= tol:
            break
    if polish:
        z = _polish_nnls(y, m, z, lam, gram)
    return z, iters


def _polish_nnls(y, m, z, lam, gram):
    n, q = z.shape
    h = y @ m - lam
    scale = np.maximum(1.0, np.max(np.abs(y @ m), axis=1) + lam)
    support = z > _SUPPORT_TOL
    a = np.where(support, z, 0.0)
    dirty = np.ones(n, dtype=bool)
    for _ in range(_MAX_POLISH_ROUNDS):
        if not dirty.any():
            break
        idx = np.flatnonzero(dirty)
        patterns, inverse = np.unique(support[idx], axis=0, return_inverse=True)
        for gi, pat in enumerate(patterns):
            rows = idx[inverse == gi]
            cols = np.flatnonzero(pat)
            if cols.size == 0:
                a[rows] = 0.0
                continue
            sub = gram[np.ix_(cols, cols)]
            try:
                sol = np.linalg.solve(sub, h[np.ix_(rows, cols)].T).T
            except np.linalg.LinAlgError:
                sub = sub + 1e-12 * np.trace(sub) / cols.size * np.eye(cols.size)
                sol = np.linalg.solve(sub, h[np.ix_(rows, cols)].T).T
            a[np.ix_(rows, np.arange(q))] = 0.0
            a[np.ix_(rows, cols)] = sol
        bad = ~np.isfinite(a).all(axis=1)
        a[bad] = z[bad]
        neg = (a < -1e-12) & support
        new_dirty = neg.any(axis=1)
        support &= ~neg
        np.clip(a, 0.0, None, out=a)
        grad = a @ gram - (h)                   # = M^T(Ma - y) + lam
        slack = np.where(support, np.inf, grad)
        worst = np.argmin(slack, axis=1)
        viol = slack[np.arange(n), worst] < -_KKT_TOL * scale
        viol &= ~new_dirty
        support[viol, worst[viol]] = True
        new_dirty |= viol
        new_dirty &= ~bad
        dirty = new_dirty
    a[dirty] = z[dirty]
    return a


_ZERO_COST_FLOOR = 1e-24


def monotone_loop(initial_state, step_fn, cost_fn, blend_fn, max_iters, tol):
    """Alternating-minimization driver with an enforced nonincreasing cost.

    A step that raises the cost is rejected and retried with a halved
    step (state blended toward the candidate) up to five times; if the
    cost still will not drop, the loop terminates unconverged. Only
    accepted costs enter the history. Costs at the floating-point floor
    count as zero, so exact-data fixtures stop at the initialization.
    """
    state = initial_state
    c = cost_fn(state)
    history = [c]
    if c <= _ZERO_COST_FLOOR:
        return state, history, True
    converged = False
    for _ in range(max_iters):
        cand = step_fn(state)
        c_new = cost_fn(cand)
        if c_new > c:
            accepted = False
            f = 0.5
            for _ in range(5):
                blended = blend_fn(state, cand, f)
                c_b = cost_fn(blended)
                if c_b <= c:
                    cand, c_new, accepted = blended, c_b, True
                    break
                f *= 0.5
            if not accepted:
                return state, history, False
        rel = (c - c_new) / max(c, 1e-300)
        state = cand
        c = c_new
        history.append(c)
        if rel < tol or c <= _ZERO_COST_FLOOR:
            converged = True
            break
    return state, history, converged
