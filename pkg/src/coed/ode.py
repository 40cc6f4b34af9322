"""Reaction kinetics right-hand sides and a batched Dormand-Prince 5(4) integrator.

The reaction chain A <-> B -> C has second-order forward reactions and a
first-order backward reaction with Arrhenius rate constants. The state
``s = (a, b, c)`` holds mole fractions; ``s_theta`` is its 3x6 Jacobian with
respect to ``theta = (alpha_1, alpha_2, alpha_3, E_1, E_2, E_3)``. Both are
integrated jointly as one 21-component system, row-major flattened as
``[s, s_theta.ravel()]``.

The integrator advances many independent trajectories at once, each with
its own adaptive step size. Output times are hit exactly by clipping the
step that would cross them.

References
----------
.. [1] Dormand, J. R., & Prince, P. J. (1980). A family of embedded
       Runge-Kutta formulae. J. Comput. Appl. Math. 6(1), 19-26.
.. [2] Hairer, E., Norsett, S. P., & Wanner, G. (1993). Solving Ordinary
       Differential Equations I, 2nd ed., Sec. II.5-II.6.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import StepUnderflow

#: universal gas constant in cal / (mol K)
R_GAS = 1.986

N_STATE = 3
N_PARAM = 6
N_AUG = N_STATE + N_STATE * N_PARAM

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# fifth-order minus embedded fourth-order weights
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# continuous extension, y(t + s h) = y + h * K^T (P @ [s, s^2, s^3, s^4])
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


@dataclass(frozen=True)
class IntegratorSettings:
    rtol: float = 1e-8
    atol: float = 1e-10
    max_step: float = 0.5
    min_step: float = 1e-12
    dense_output: bool = False
    first_step: float = 1e-2

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("rtol and atol must be positive")
        if not (0 < self.min_step <= self.max_step):
            raise ValueError("need 0 < min_step <= max_step")


@dataclass(frozen=True)
class AugmentedState:
    s: np.ndarray
    s_theta: np.ndarray

    @classmethod
    def initial(cls, s0) -> "AugmentedState":
        return cls(np.asarray(s0, dtype=float), np.zeros((N_STATE, N_PARAM)))

    @classmethod
    def from_vector(cls, y) -> "AugmentedState":
        y = np.asarray(y, dtype=float)
        return cls(y[:N_STATE].copy(), y[N_STATE:].reshape(N_STATE, N_PARAM).copy())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.s, np.asarray(self.s_theta).ravel()])


def rate_constants(T, theta) -> np.ndarray:
    """Arrhenius rates ``k_i = alpha_i exp(-E_i / (R T))``, shape ``T.shape + (3,)``."""
    theta = np.asarray(theta, dtype=float)
    T = np.asarray(T, dtype=float)[..., None]
    return theta[:3] * np.exp(-theta[3:] / (R_GAS * T))


def rhs_state(s, T, theta) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    k = rate_constants(T, theta)
    s1, s2 = s[..., 0], s[..., 1]
    r1 = k[..., 0] * s1 * s1
    r2 = k[..., 1] * s2 * s2
    r3 = k[..., 2] * s2
    return np.stack([-r1 + r3, r1 - r2 - r3, r2], axis=-1)


def jacobian_state(s, T, theta) -> np.ndarray:
    """``D_s g``, shape ``(..., 3, 3)``."""
    s = np.asarray(s, dtype=float)
    k = rate_constants(T, theta)
    s1, s2 = s[..., 0], s[..., 1]
    J = np.zeros(s.shape[:-1] + (3, 3))
    J[..., 0, 0] = -2 * k[..., 0] * s1
    J[..., 0, 1] = k[..., 2]
    J[..., 1, 0] = 2 * k[..., 0] * s1
    J[..., 1, 1] = -2 * k[..., 1] * s2 - k[..., 2]
    J[..., 2, 1] = 2 * k[..., 1] * s2
    return J


def jacobian_theta(s, T, theta) -> np.ndarray:
    """``D_theta g``, shape ``(..., 3, 6)``.

    Uses ``dk_i/dalpha_i = k_i / alpha_i`` and ``dk_i/dE_i = -k_i / (R T)``.
    """
    s = np.asarray(s, dtype=float)
    theta = np.asarray(theta, dtype=float)
    T = np.asarray(T, dtype=float)
    expo = np.exp(-theta[3:] / (R_GAS * T[..., None]))
    k = theta[:3] * expo
    s1, s2 = s[..., 0], s[..., 1]
    # dg/dk_i columns
    dg_dk = np.zeros(s.shape[:-1] + (3, 3))
    dg_dk[..., 0, 0] = -s1 * s1
    dg_dk[..., 1, 0] = s1 * s1
    dg_dk[..., 1, 1] = -s2 * s2
    dg_dk[..., 2, 1] = s2 * s2
    dg_dk[..., 0, 2] = s2
    dg_dk[..., 1, 2] = -s2
    dk_dE = -k / (R_GAS * T[..., None])
    return np.concatenate([dg_dk * expo[..., None, :], dg_dk * dk_dE[..., None, :]], axis=-1)


def rhs_augmented(y, T, theta) -> np.ndarray:
    """Right-hand side of the joint state + sensitivity system, shape ``(..., 21)``."""
    y = np.asarray(y, dtype=float)
    s = y[..., :N_STATE]
    S = y[..., N_STATE:].reshape(y.shape[:-1] + (N_STATE, N_PARAM))
    dS = jacobian_state(s, T, theta) @ S + jacobian_theta(s, T, theta)
    return np.concatenate([rhs_state(s, T, theta), dS.reshape(y.shape[:-1] + (-1,))], axis=-1)


def dopri5(
    fun: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray],
    y0: np.ndarray,
    t_out,
    settings: IntegratorSettings = IntegratorSettings(),
    t0: float = 0.0,
) -> np.ndarray:
    """Integrate a batch of independent initial-value problems.

    Parameters
    ----------
    fun : callable
        ``fun(t, y, rows) -> dy/dt`` for ``t`` of shape ``(m,)``, ``y`` of
        shape ``(m, n)`` and ``rows`` the batch indices being evaluated
        (lets the caller look up per-trajectory constants).
    y0 : ndarray, shape (N, n)
    t_out : array_like
        Strictly increasing output times, all ``>= t0``.

    Returns
    -------
    ndarray, shape (N, len(t_out), n)

    Raises
    ------
    StepUnderflow
        If some trajectory would need a step shorter than ``settings.min_step``.
    """
    y0 = np.atleast_2d(np.asarray(y0, dtype=float))
    t_out = np.atleast_1d(np.asarray(t_out, dtype=float))
    if np.any(np.diff(t_out) <= 0) or t_out[0] < t0:
        raise ValueError("t_out must be strictly increasing and >= t0")
    N, n = y0.shape
    n_out = len(t_out)
    result = np.empty((N, n_out, n))

    t = np.full(N, float(t0))
    y = y0.copy()
    nxt = np.zeros(N, dtype=np.int64)
    # outputs at t0 itself
    at_start = t_out[0] == t0
    if at_start:
        result[:, 0] = y0
        nxt[:] = 1
    if n_out == nxt[0]:
        return result
    h = np.full(N, min(settings.first_step, settings.max_step))
    rows_all = np.arange(N)
    f = fun(t, y, rows_all)
    active = rows_all.copy()

    while active.size:
        ta, ya, fa, ha = t[active], y[active], f[active], h[active]
        if settings.dense_output:
            room = t_out[-1] - ta
        else:
            room = t_out[nxt[active]] - ta
        clipped = ha >= room
        ha = np.where(clipped, room, ha)

        K = np.empty((7,) + ya.shape)
        K[0] = fa
        for i in range(1, 7):
            dy = np.tensordot(np.asarray(_A[i]), K[:i], axes=(0, 0))
            K[i] = fun(ta + _C[i] * ha, ya + ha[:, None] * dy, active)
        y_new = ya + ha[:, None] * np.tensordot(_B, K, axes=(0, 0))
        err = ha[:, None] * np.tensordot(_E, K, axes=(0, 0))
        scale = settings.atol + settings.rtol * np.maximum(np.abs(ya), np.abs(y_new))
        err_norm = np.max(np.abs(err) / scale, axis=1)
        # overflow or nan in a trial step is treated as a maximal rejection
        err_norm = np.where(np.isfinite(err_norm) & np.all(np.isfinite(y_new), axis=1), err_norm, np.inf)
        accept = err_norm <= 1.0

        with np.errstate(divide="ignore"):
            factor = 0.9 * err_norm ** -0.2
        factor = np.where(err_norm == 0, 5.0, factor)
        factor = np.clip(factor, 0.2, np.where(accept, 5.0, 1.0))
        h_next = np.minimum(ha * factor, settings.max_step)
        # a clipped accepted step says nothing about the attainable step length
        h_next = np.where(accept & clipped, np.maximum(h_next, np.minimum(h[active], settings.max_step)), h_next)

        bad = (~accept) & (h_next < settings.min_step)
        if np.any(bad):
            row = int(active[np.argmax(bad)])
            raise StepUnderflow(f"trajectory {row}: step {h_next[bad][0]:.3e} below min_step at t={t[row]:.6g}")

        acc_rows = active[accept]
        t_old = t[acc_rows]
        if settings.dense_output:
            _dense_record(result, nxt, acc_rows, t_old, ha[accept], ya[accept], K[:, accept], t_out)
            t[acc_rows] = np.where(clipped[accept], t_out[-1], t_old + ha[accept])
        else:
            hit = clipped[accept]
            t[acc_rows] = np.where(hit, t_out[nxt[acc_rows]], t_old + ha[accept])
            hit_rows = acc_rows[hit]
            result[hit_rows, nxt[hit_rows]] = y_new[accept][hit]
            nxt[hit_rows] += 1
        y[acc_rows] = y_new[accept]
        f[acc_rows] = K[6][accept]
        h[active] = h_next
        if settings.dense_output:
            # the final output may coincide with the end of the last step
            end_rows = acc_rows[t[acc_rows] >= t_out[-1]]
            result[end_rows, -1] = y[end_rows]
            nxt[end_rows] = n_out
        active = active[nxt[active] < n_out]
    return result


def _dense_record(result, nxt, rows, t_old, hs, ys, K, t_out):
    t_new = t_old + hs
    n_out = len(t_out)
    for j, row in enumerate(rows):
        while nxt[row] < n_out and t_out[nxt[row]] <= t_new[j] and t_out[nxt[row]] < t_out[-1]:
            s = (t_out[nxt[row]] - t_old[j]) / hs[j]
            Q = K[:, j].T @ _P
            result[row, nxt[row]] = ys[j] + hs[j] * (Q @ np.array([s, s * s, s**3, s**4]))
            nxt[row] += 1


def integrate(
    x0: AugmentedState,
    T: float,
    theta,
    t_end: float,
    settings: IntegratorSettings = IntegratorSettings(),
) -> AugmentedState:
    """Integrate the joint state + sensitivity system for one experiment."""
    if t_end == 0:
        return x0
    theta = np.asarray(theta, dtype=float)

    def fun(t, y, rows):
        return rhs_augmented(y, T, theta)

    out = dopri5(fun, x0.as_vector()[None, :], [t_end], settings)
    return AugmentedState.from_vector(out[0, -1])


def solve_kinetics(s0, T, theta, t_out, settings: IntegratorSettings = IntegratorSettings()) -> np.ndarray:
    """Batched joint solve for initial compositions ``s0`` (N, 3) at temperatures ``T`` (N,).

    Returns the augmented states at ``t_out``, shape ``(N, len(t_out), 21)``.
    """
    s0 = np.atleast_2d(np.asarray(s0, dtype=float))
    T = np.broadcast_to(np.asarray(T, dtype=float), (s0.shape[0],))
    theta = np.asarray(theta, dtype=float)
    y0 = np.zeros((s0.shape[0], N_AUG))
    y0[:, :N_STATE] = s0

    def fun(t, y, rows):
        return rhs_augmented(y, T[rows], theta)

    return dopri5(fun, y0, t_out, settings)
