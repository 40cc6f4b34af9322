"""Weight optimisation on a finite subspace of candidates.

On a fixed subspace ``X^k = {x_1, ..., x_n}`` the design problem becomes a
smooth convex program in the weight vector::

    min  Phi_0(sum_j w_j m(x_j))
    s.t. c_i(w) <= 0          (inequality constraints)
         G_eq w = 0           (integral equality constraints)
         1^T w = 1,  w >= 0

It is solved by a primal-dual interior-point method with exact Hessians.
The bound multipliers ``z`` of ``w >= 0`` are, up to the simplex
multiplier, the Lagrangian sensitivities on the subspace:
``psi_L(x_j) = z_j - w^T z``. Every returned saddle point is re-checked by
recomputing ``psi_L`` from scratch with :mod:`coed.criteria`.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve
from scipy.optimize import linprog

from . import linalg
from .criteria import Design, Problem, constraint_values, info_matrix, lagrangian_sensitivity
from .errors import DomainEscape, Infeasible, MaxIterations, SolverError

log = logging.getLogger(__name__)

#: barrier level (relative) below which the active-set polish is attempted
POLISH_MU = 1e-9
#: iterations without halving the residual before declaring a stall
STALL_WINDOW = 5


@dataclass(frozen=True)
class SolverTolerances:
    kkt: float = 1e-8
    feas: float = 1e-9
    comp: float = 1e-9
    weight_floor: float = 1e-9
    max_iter: int = 300
    mu_tol: float = 1e-17
    residual_tol: float = 1e-12

    def __post_init__(self):
        for name in ("kkt", "feas", "comp", "mu_tol", "residual_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_floor < 0:
            raise ValueError("weight_floor must be non-negative")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")


@dataclass(frozen=True, eq=False)
class SaddlePoint:
    design: Design
    lam: np.ndarray
    kkt_residual: float
    feas_residual: float
    iterations: int = 0


@dataclass(frozen=True)
class LPResult:
    weights: np.ndarray
    optimum: float


# ---------------------------------------------------------------------------
# problem data on a subspace


class _SubspaceFunctions:
    """Objective and constraint derivatives as functions of the weight vector."""

    def __init__(self, problem: Problem, subspace: np.ndarray):
        space = problem.space
        self.problem = problem
        self.subspace = subspace
        self.n = subspace.size
        self.mats = linalg.unpack(space.info[subspace], space.d_theta)
        self.ineq_ids = [i for i, c in enumerate(problem.constraints) if not c.is_equality]
        self.eq_ids = [i for i, c in enumerate(problem.constraints) if c.is_equality]
        self.ineqs = [problem.constraints[i] for i in self.ineq_ids]
        rows = [np.ones(self.n)]
        rows += [problem.constraints[i].integrand(space)[subspace] for i in self.eq_ids]
        self.A = np.vstack(rows)
        self.b = np.zeros(len(rows))
        self.b[0] = 1.0
        self._rows = {i: c.integrand(space)[subspace] for i, c in zip(self.ineq_ids, self.ineqs) if c.kind == "integral"}

    @property
    def m(self) -> int:
        return len(self.ineqs)

    def objective(self, w):
        return self.problem.objective.weight_derivatives(self.mats, w)

    def inequalities(self, w):
        """Values, Jacobian and Hessians of the inequality constraints, or ``None``."""
        c = np.zeros(self.m)
        J = np.zeros((self.m, self.n))
        H = []
        for k, (i, con) in enumerate(zip(self.ineq_ids, self.ineqs)):
            if con.kind == "moment":
                out = con.criterion.weight_derivatives(self.mats, w)
                if out is None:
                    return None
                c[k], J[k], hk = out
                c[k] += con.offset
                H.append(hk)
            else:
                row = self._rows[i]
                c[k] = row @ w
                J[k] = row
                H.append(None)
        return c, J, H


@dataclass
class _Eval:
    f: float
    g: np.ndarray
    H: np.ndarray
    c: np.ndarray
    J: np.ndarray
    Hc: list


@dataclass
class _IpmResult:
    v: np.ndarray
    lam: np.ndarray
    y: np.ndarray
    z: np.ndarray
    iterations: int
    early: bool = False
    stalled: bool = False
    polished: object = None


def alpha_max_domain(v, dv, fun) -> bool:
    """True when even tiny steps along ``dv`` leave the domain."""
    return fun(v + 1e-12 * dv) is None


def _ipm(
    fun: Callable[[np.ndarray], _Eval | None],
    nonneg: np.ndarray,
    A: np.ndarray,
    b: np.ndarray,
    v0: np.ndarray,
    tol: SolverTolerances,
    lam0: np.ndarray | None = None,
    early_stop: Callable[[np.ndarray], bool] | None = None,
    polish: Callable[..., object] | None = None,
) -> _IpmResult:
    """Infeasible-start primal-dual interior-point method.

    Solves ``min f(v)  s.t. c(v) + s = 0, s >= 0, A v = b, v[nonneg] >= 0``.
    ``fun`` returns ``None`` outside the domain of ``f`` or ``c``. Once the
    barrier parameter is small, ``polish(v, s, lam, z, y)`` may return an
    exact solution, which ends the iteration.
    """
    v = np.array(v0, dtype=float)
    ev = fun(v)
    if ev is None:
        raise DomainEscape("starting point outside the criterion domain")
    m = ev.c.size
    E = np.flatnonzero(nonneg)
    s = np.maximum(-ev.c, 1e-2)
    lam = np.ones(m) if lam0 is None else np.maximum(np.asarray(lam0, dtype=float), 1e-2)
    z = np.ones(E.size)
    y = np.zeros(A.shape[0])
    n_comp = m + E.size

    def residuals(ev, v, s, lam, z, y):
        r_d = ev.g + ev.J.T @ lam + A.T @ y
        r_d[E] -= z
        return r_d, ev.c + s, A @ v - b

    def merit(ev, v, s, lam, z, y, target):
        r_d, r_c, r_eq = residuals(ev, v, s, lam, z, y)
        return np.sqrt(r_d @ r_d + r_c @ r_c + r_eq @ r_eq + np.sum((lam * s - target) ** 2) + np.sum((v[E] * z - target) ** 2))

    history: list[float] = []
    for it in range(tol.max_iter):
        if early_stop is not None and early_stop(v):
            return _IpmResult(v, lam, y, z, it, early=True)
        r_d, r_c, r_eq = residuals(ev, v, s, lam, z, y)
        mu = (lam @ s + v[E] @ z) / max(n_comp, 1)
        scale = 1.0 + np.max(np.abs(ev.g))
        if polish is not None and mu <= POLISH_MU * scale:
            polished = polish(v, s, lam, z, y)
            if polished is not None:
                return _IpmResult(v, lam, y, z, it, polished=polished)
        if (
            mu <= tol.mu_tol * scale
            and np.max(np.abs(r_d), initial=0.0) <= tol.residual_tol * scale
            and np.max(np.abs(r_c), initial=0.0) <= tol.residual_tol * (1.0 + np.max(np.abs(ev.c), initial=0.0))
            and np.max(np.abs(r_eq), initial=0.0) <= tol.residual_tol
        ):
            return _IpmResult(v, lam, y, z, it)
        # at the rounding floor the residual stops shrinking; the caller re-verifies KKT
        history.append(merit(ev, v, s, lam, z, y, 0.0))
        if mu <= POLISH_MU * scale and len(history) > STALL_WINDOW and history[-1] > 0.5 * history[-1 - STALL_WINDOW]:
            polished = polish(v, s, lam, z, y) if polish is not None else None
            return _IpmResult(v, lam, y, z, it, stalled=True, polished=polished)

        K = ev.H.copy()
        for l_i, h in zip(lam, ev.Hc):
            if h is not None:
                K += l_i * h
        K += ev.J.T @ ((lam / s)[:, None] * ev.J)
        K[E, E] += z / v[E]
        nv, ne = v.size, A.shape[0]
        KKT = np.zeros((nv + ne, nv + ne))
        KKT[:nv, :nv] = K
        KKT[:nv, nv:] = A.T
        KKT[nv:, :nv] = A
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", LinAlgWarning)
                lu = lu_factor(KKT, check_finite=True)
            if not np.all(np.isfinite(lu[0])) or np.min(np.abs(np.diag(lu[0]))) == 0.0:
                raise ValueError
            solve = lambda r: lu_solve(lu, r)
        except (ValueError, np.linalg.LinAlgError):
            solve = lambda r: np.linalg.lstsq(KKT, r, rcond=None)[0]

        def direction(t_c, t_b):
            # t_c, t_b: complementarity targets for (lam, s) and (z, v)
            rhs = -r_d - ev.J.T @ ((lam / s) * (r_c - s) + t_c / s)
            rhs[E] += t_b / v[E] - z
            sol = solve(np.concatenate([rhs, -r_eq]))
            dv, dy = sol[:nv], sol[nv:]
            ds = -r_c - ev.J @ dv
            dlam = (lam / s) * (ev.J @ dv + r_c - s) + t_c / s
            dz = t_b / v[E] - z - (z / v[E]) * dv[E]
            return dv, dy, ds, dlam, dz

        def max_step(d, frac):
            dv, _, ds, dlam, dz = d
            alpha = 1.0
            for x, dx in ((v[E], dv[E]), (s, ds), (lam, dlam), (z, dz)):
                neg = dx < 0
                if np.any(neg):
                    alpha = min(alpha, frac * float(np.min(-x[neg] / dx[neg])))
            return alpha

        # Mehrotra predictor-corrector
        aff = direction(np.zeros(m), np.zeros(E.size))
        a_aff = max_step(aff, 1.0)
        mu_aff = ((lam + a_aff * aff[3]) @ (s + a_aff * aff[2]) + (v[E] + a_aff * aff[0][E]) @ (z + a_aff * aff[4])) / max(n_comp, 1)
        sigma = float(np.clip((mu_aff / mu) ** 3, 1e-6, 0.9)) if mu > 0 else 0.0
        target = sigma * mu
        candidates = [
            (direction(target - aff[3] * aff[2], target - aff[0][E] * aff[4]), target),
            (direction(np.full(m, 0.5 * mu), np.full(E.size, 0.5 * mu)), 0.5 * mu),
        ]
        accepted = False
        domain_fail = False
        for d, tgt in candidates:
            dv, dy, ds, dlam, dz = d
            alpha = max_step(d, 0.995)
            phi0 = merit(ev, v, s, lam, z, y, tgt)
            while alpha > 1e-14:
                vt = v + alpha * dv
                evt = fun(vt)
                if evt is None:
                    domain_fail = True
                    alpha *= 0.5
                    continue
                st, lt, zt, yt = s + alpha * ds, lam + alpha * dlam, z + alpha * dz, y + alpha * dy
                if merit(evt, vt, st, lt, zt, yt, tgt) <= (1.0 - 1e-4 * alpha) * phi0:
                    v, s, lam, z, y, ev = vt, st, lt, zt, yt, evt
                    accepted = True
                    break
                alpha *= 0.5
            if accepted:
                break
        if not accepted:
            if domain_fail and alpha_max_domain(v, dv, fun):
                raise DomainEscape("line search could not keep the information matrix nonsingular")
            # rounding floor reached; the caller re-verifies the KKT conditions
            log.debug("interior-point line search stalled at iteration %d (mu=%.3e)", it, mu)
            polished = polish(v, s, lam, z, y) if polish is not None else None
            return _IpmResult(v, lam, y, z, it, stalled=True, polished=polished)
    raise MaxIterations(f"interior-point method did not converge in {tol.max_iter} iterations")


def kkt_floor(M: np.ndarray, kkt: float) -> float:
    """KKT tolerance raised to the rounding level of sensitivities at ``M``.

    Sensitivities are traces ``tr(M^-1 m(x))`` whose rounding error grows
    like ``eps * cond`` of the diagonally scaled ``M``; an absolute
    tolerance below that level cannot be verified.
    """
    return max(kkt, float(np.finfo(float).eps) * linalg.scaled_condition(M))


def _polish(fs: _SubspaceFunctions, v, s, lam, z, y, kkt_tol: float):
    """Newton solve of the KKT equations on the support and active set.

    The support is ``{w_j > z_j}``, the active inequalities
    ``{lam_i > s_i}``. Returns ``(w, lam, y)`` when the solution keeps
    positive weights, non-negative multipliers, satisfies the inactive
    inequalities and leaves no sensitivity below ``-kkt_tol / 10``;
    ``None`` otherwise.
    """
    n = fs.n
    S = v > z
    act = lam > s
    if not S.any():
        return None
    A_S = fs.A[:, S]
    nS, kA, ne = int(S.sum()), int(act.sum()), fs.A.shape[0]
    wS, lA, yy = v[S].copy(), lam[act].copy(), y.copy()
    full = np.zeros(n)
    prev = np.inf
    for it in range(30):
        full[:] = 0.0
        full[S] = wS
        obj = fs.objective(full)
        ineq = fs.inequalities(full) if fs.m else (np.zeros(0), np.zeros((0, n)), [])
        if obj is None or ineq is None:
            return None
        _, g, H = obj
        c, J, Hc = ineq
        JA = J[act][:, S]
        r = np.concatenate([g[S] + JA.T @ lA + A_S.T @ yy, c[act], A_S @ wS - fs.b])
        scale = 1.0 + np.max(np.abs(g))
        res = float(np.max(np.abs(r)))
        if res <= 1e-14 * scale or (it >= 3 and res > 0.5 * prev):
            break
        prev = res
        K = H[np.ix_(S, S)].copy()
        for l_i, h in zip(lA, [h for h, a in zip(Hc, act) if a]):
            if h is not None:
                K += l_i * h[np.ix_(S, S)]
        size = nS + kA + ne
        KKT = np.zeros((size, size))
        KKT[:nS, :nS] = K
        KKT[:nS, nS:nS + kA] = JA.T
        KKT[:nS, nS + kA:] = A_S.T
        KKT[nS:nS + kA, :nS] = JA
        KKT[nS + kA:, :nS] = A_S
        step = np.linalg.lstsq(KKT, -r, rcond=None)[0]
        wS += step[:nS]
        lA += step[nS:nS + kA]
        yy += step[nS + kA:]
        if np.any(wS <= 0):
            return None
    else:
        return None
    if np.any(lA < -1e-12) or np.any(c[~act] > 0):
        return None
    lam_full = np.zeros(fs.m)
    lam_full[act] = np.maximum(lA, 0.0)
    dL = g + J.T @ lam_full + fs.A[1:].T @ yy[1:]
    w = full / full.sum()
    psi = dL - w @ dL
    kkt_tol = kkt_floor(np.tensordot(w, fs.mats, axes=(0, 0)), kkt_tol)
    if np.max(np.abs(psi[S])) > kkt_tol or np.min(psi) < -0.1 * kkt_tol:
        return None
    return w, lam_full, yy


# ---------------------------------------------------------------------------
# public API


def _as_subspace(problem: Problem, subspace) -> np.ndarray:
    idx = np.asarray(subspace, dtype=np.int64).ravel()
    if idx.size == 0:
        raise ValueError("subspace is empty")
    if np.unique(idx).size != idx.size:
        raise ValueError("subspace indices must be unique")
    if np.any(idx < 0) or np.any(idx >= len(problem.space)):
        raise ValueError("subspace index out of range")
    return idx


def _design(problem: Problem, subspace: np.ndarray, w: np.ndarray, floor: float) -> Design:
    w = np.where(w > floor, w, 0.0)
    if w.sum() <= 0:
        raise SolverError("all weights fell below the weight floor")
    w = w / w.sum()
    keep = w > 0
    return Design(problem.space, subspace[keep], w[keep])


def _center(fs: _SubspaceFunctions, tol: SolverTolerances) -> np.ndarray:
    """Analytic centre of ``{w >= 0, A w = b}``; uniform without equalities."""
    n = fs.n
    uniform = np.full(n, 1.0 / n)
    if fs.A.shape[0] == 1:
        return uniform
    try:
        solve_lp(np.zeros(n), fs.A[1:], fs.b[1:])
    except Infeasible:
        raise Infeasible("equality constraints cannot be met on this subspace") from None

    def fun(w):
        return _Eval(0.0, np.zeros(n), np.zeros((n, n)), np.zeros(0), np.zeros((0, n)), [])

    res = _ipm(fun, np.ones(n, dtype=bool), fs.A, fs.b, uniform, replace(tol, mu_tol=1e-10))
    w = np.maximum(res.v, 0.0)
    return w / w.sum()


def _phase1_weights(fs: _SubspaceFunctions, margin: float, tol: SolverTolerances) -> np.ndarray:
    n, m = fs.n, fs.m
    center = _center(fs, tol)

    def good(w):
        if np.any(w < 0):
            return False
        wn = w / w.sum()
        if np.max(np.abs(fs.A[1:] @ wn), initial=0.0) > tol.feas:
            return False
        if fs.objective(wn) is None:
            return False
        ineq = fs.inequalities(wn)
        return ineq is not None and np.max(ineq[0], initial=-np.inf) <= -margin

    if good(center):
        return center
    if fs.objective(center) is None:
        raise Infeasible("the information matrix is singular for every design on this subspace")
    if m == 0:
        raise Infeasible("equality constraints cannot be met to tolerance on this subspace")

    # minimise t subject to c_i(w) <= t
    A = np.hstack([fs.A, np.zeros((fs.A.shape[0], 1))])
    g = np.zeros(n + 1)
    g[-1] = 1.0

    def fun(v):
        w, t = v[:n], v[n]
        if fs.objective(w) is None:
            return None
        out = fs.inequalities(w)
        if out is None:
            return None
        c, J, Hc = out
        Ht = []
        for h in Hc:
            if h is None:
                Ht.append(None)
            else:
                hh = np.zeros((n + 1, n + 1))
                hh[:n, :n] = h
                Ht.append(hh)
        return _Eval(t, g, np.zeros((n + 1, n + 1)), c - t, np.hstack([J, -np.ones((m, 1))]), Ht)

    c0 = fs.inequalities(center)
    if c0 is None:
        raise Infeasible("moment constraint undefined at the starting design")
    v0 = np.append(center, np.max(c0[0]) + 1.0)
    nonneg = np.append(np.ones(n, dtype=bool), False)
    try:
        res = _ipm(fun, nonneg, A, fs.b, v0, tol, early_stop=lambda v: good(v[:n]))
    except MaxIterations:
        raise Infeasible("phase-1 problem did not converge") from None
    w = np.maximum(res.v[:n], 0.0)
    w /= w.sum()
    if not good(w):
        worst = np.max(fs.inequalities(w)[0], initial=-np.inf)
        raise Infeasible(f"no strictly feasible design on this subspace (best max constraint {worst:.6g}, margin {margin:g})")
    # move back towards the centre to keep the information matrix well conditioned
    for beta in (0.5, 0.25, 0.1, 0.01, 1e-3):
        mix = (1.0 - beta) * w + beta * center
        if good(mix):
            return mix / mix.sum()
    return w


def phase1_feasible(problem: Problem, subspace, margin: float = 1e-6, tol: SolverTolerances = SolverTolerances()) -> Design:
    """Find a design on ``subspace`` with every inequality ``<= -margin``.

    Equalities hold to ``tol.feas`` and the information matrix is nonsingular.

    Raises
    ------
    Infeasible
        If the smallest achievable maximum violation is not below ``-margin``.
    """
    idx = _as_subspace(problem, subspace)
    fs = _SubspaceFunctions(problem, idx)
    w = _phase1_weights(fs, margin, tol)
    return Design(problem.space, idx, w / w.sum())


def solve_saddle(
    problem: Problem,
    subspace,
    start: tuple[Design, Sequence[float]] | Design | None = None,
    tol: SolverTolerances = SolverTolerances(),
) -> SaddlePoint:
    """Optimal weights and multipliers of ``problem`` restricted to ``subspace``.

    Parameters
    ----------
    start
        Optional warm start, a design (its support must lie in ``subspace``)
        possibly paired with multipliers.

    Raises
    ------
    Infeasible, MaxIterations, DomainEscape
    """
    idx = _as_subspace(problem, subspace)
    fs = _SubspaceFunctions(problem, idx)
    n, m = fs.n, fs.m
    n_con = len(problem.constraints)
    lam_warm = None
    w_warm = None
    if start is not None:
        if isinstance(start, Design):
            start_design = start
        else:
            start_design, lam_warm = start
            lam_warm = None if lam_warm is None else np.asarray(lam_warm, dtype=float)
        pos = {int(j): k for k, j in enumerate(idx)}
        w_warm = np.zeros(n)
        for j, wj in zip(start_design.indices, start_design.weights):
            if int(j) not in pos:
                raise ValueError("warm-start support is not contained in the subspace")
            w_warm[pos[int(j)]] = wj

    if n == 1:
        design = Design(problem.space, idx, [1.0])
        vals = constraint_values(problem, design)
        feas = _feasibility(problem, vals)
        if feas > tol.feas:
            raise Infeasible("the single-point design violates the constraints")
        if fs.objective(np.ones(1)) is None:
            raise DomainEscape("single-point design has a singular information matrix")
        return SaddlePoint(design, np.zeros(n_con), 0.0, feas, 0)

    uniform = np.full(n, 1.0 / n)
    w0 = None
    if w_warm is not None:
        for beta in (0.1, 0.01, 1e-3):
            cand = (1.0 - beta) * w_warm + beta * uniform
            if fs.objective(cand) is not None and (m == 0 or fs.inequalities(cand) is not None):
                w0 = cand
                break
    if w0 is None:
        if fs.objective(uniform) is None:
            raise Infeasible("the information matrix is singular for every design on this subspace")
        w0 = uniform
        if m or fs.A.shape[0] > 1:
            w0 = _phase1_weights(fs, 0.0, tol)

    def fun(w):
        obj = fs.objective(w)
        if obj is None:
            return None
        out = fs.inequalities(w) if m else (np.zeros(0), np.zeros((0, n)), [])
        if out is None:
            return None
        return _Eval(obj[0], obj[1], obj[2], out[0], out[1], out[2])

    lam0 = None
    if lam_warm is not None and lam_warm.size == n_con and m:
        lam0 = lam_warm[fs.ineq_ids]
    res = _ipm(
        fun,
        np.ones(n, dtype=bool),
        fs.A,
        fs.b,
        w0,
        tol,
        lam0=lam0,
        polish=lambda *state: _polish(fs, *state, kkt_tol=tol.kkt),
    )
    w, lam_in, y = res.polished if res.polished is not None else (res.v, res.lam, res.y)

    lam = np.zeros(n_con)
    lam[fs.ineq_ids] = lam_in
    lam[fs.eq_ids] = y[1:]
    ineq_mask = problem.inequality_mask
    lam[ineq_mask & (lam < 0)] = 0.0
    design = _design(problem, idx, w, tol.weight_floor)
    return _checked(problem, idx, design, lam, res.iterations, tol)


def _feasibility(problem: Problem, vals: np.ndarray) -> float:
    if vals.size == 0:
        return 0.0
    mask = problem.inequality_mask
    viol = np.where(mask, np.maximum(vals, 0.0), np.abs(vals))
    return float(np.max(viol))


def _checked(problem, idx, design, lam, iterations, tol) -> SaddlePoint:
    psi = lagrangian_sensitivity(problem, design, lam, idx)
    on_support = np.isin(idx, design.indices)
    kkt = max(float(np.max(-psi, initial=0.0)), float(np.max(np.abs(psi[on_support]), initial=0.0)))
    feas = _feasibility(problem, constraint_values(problem, design))
    if kkt > kkt_floor(info_matrix(design), tol.kkt) or feas > tol.feas:
        raise MaxIterations(f"saddle point tolerance not met (kkt {kkt:.3e}, feasibility {feas:.3e})")
    return SaddlePoint(design, lam, kkt, feas, iterations)


def solve_lp(c, A_eq=None, b_eq=None) -> LPResult:
    """``min c^T w`` over the probability simplex intersected with ``A_eq w = b_eq``.

    Raises
    ------
    Infeasible
        If no weight vector satisfies the equalities.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    rows = [np.ones((1, n))]
    rhs = [np.ones(1)]
    if A_eq is not None and np.size(A_eq):
        rows.append(np.atleast_2d(np.asarray(A_eq, dtype=float)))
        rhs.append(np.atleast_1d(np.asarray(b_eq, dtype=float)))
    res = linprog(c, A_eq=np.vstack(rows), b_eq=np.concatenate(rhs), bounds=(0, None), method="highs")
    if res.status == 2:
        raise Infeasible("linear program is infeasible")
    if res.status != 0:
        raise SolverError(f"linear program failed: {res.message}")
    return LPResult(np.asarray(res.x), float(res.fun))


def max_reach(G: np.ndarray, direction: np.ndarray) -> float:
    """Largest ``delta`` with ``G w = delta * direction`` for some simplex weight ``w``.

    ``G`` has one row per equality constraint and one column per candidate.
    Returns ``-inf`` when no multiple of ``direction`` is reachable.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    direction = np.asarray(direction, dtype=float)
    k, n = G.shape
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A = np.vstack([np.append(np.ones(n), 0.0), np.hstack([G, -direction[:, None]])])
    b = np.append(1.0, np.zeros(k))
    bounds = [(0, None)] * n + [(None, None)]
    res = linprog(c, A_eq=A, b_eq=b, bounds=bounds, method="highs")
    if res.status == 2:
        return -np.inf
    if res.status == 3:
        return np.inf
    if res.status != 0:
        raise SolverError(f"linear program failed: {res.message}")
    return float(-res.fun)
