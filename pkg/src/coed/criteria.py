"""Design criteria, constraints and their sensitivity functions.

A design is a finite weight vector on a :class:`~coed.model.CandidateSpace`.
Criteria act on its information matrix ``M = sum_x w_x m(x)``:

* ``D``: ``-log det M``
* ``A``: ``tr(M^-1)``

both ``+inf`` when ``M`` is singular. Constraints are either *moment*
constraints ``Phi(M) + offset`` or *integral* constraints
``sum_x w_x g(x)`` with ``g = scale * channel + offset``.

The sensitivity of a criterion at design ``xi`` towards point ``x`` is
``DPhi(M)(m(x) - M)``; for an integral constraint it is ``g(x) - Psi(xi)``.
The Lagrangian sensitivity adds the constraint sensitivities weighted by
their multipliers. All of these are linear in the packed entries of
``m(x)`` and in the channel values, which :class:`SensitivityKernel`
exploits to scan millions of candidates with one matrix-vector product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import linalg
from .errors import DomainError, SingularMatrixError
from .model import CandidateSpace

WEIGHT_SUM_TOL = 1e-10


@dataclass(frozen=True)
class Criterion:
    """``D`` or ``A`` criterion; ``offset`` is added to the value (constraint use)."""

    tag: str = "D"
    offset: float = 0.0

    def __post_init__(self):
        if self.tag not in ("D", "A"):
            raise ValueError(f"unsupported criterion {self.tag!r}")

    def value(self, M: np.ndarray) -> float:
        return criterion_value(self, M)

    def gradient_matrix(self, M: np.ndarray) -> np.ndarray:
        """Symmetric ``G`` with ``DPhi(M)(H) = tr(G H)``; raises on singular ``M``."""
        Minv = linalg.inverse_spd(M)
        if self.tag == "D":
            return -Minv
        return -Minv @ Minv

    def weight_derivatives(self, mats: np.ndarray, w: np.ndarray):
        """Value, gradient and Hessian of ``w -> Phi(sum_x w_x m_x) + offset``.

        Returns ``None`` outside the domain (singular information matrix).
        """
        M = np.tensordot(w, mats, axes=(0, 0))
        try:
            L = linalg.cholesky(M)
        except SingularMatrixError:
            return None
        P = linalg.cho_solve(L, np.eye(M.shape[0]))
        P = 0.5 * (P + P.T)
        K = P @ mats
        if self.tag == "D":
            val = -2.0 * float(np.sum(np.log(np.diag(L))))
            grad = -np.einsum("xii->x", K)
            hess = np.einsum("xij,yji->xy", K, K)
        else:
            val = float(np.trace(P))
            grad = -np.einsum("xij,ji->x", K, P)
            hess = 2.0 * np.einsum("xij,yjk,ki->xy", K, K, P)
        return val + self.offset, grad, 0.5 * (hess + hess.T)


@dataclass(frozen=True)
class Constraint:
    """One inequality (``Psi <= 0``) or equality (``Psi = 0``) constraint."""

    name: str
    kind: str
    relation: str = "le"
    criterion: Criterion | None = None
    channel: str | None = None
    scale: float = 1.0
    offset: float = 0.0
    continuity: str = "continuous"

    def __post_init__(self):
        if self.kind not in ("moment", "integral"):
            raise ValueError(f"{self.name}: kind must be 'moment' or 'integral'")
        if self.relation not in ("le", "eq"):
            raise ValueError(f"{self.name}: relation must be 'le' or 'eq'")
        if self.continuity not in ("continuous", "lsc"):
            raise ValueError(f"{self.name}: continuity must be 'continuous' or 'lsc'")
        if self.kind == "moment":
            if self.criterion is None:
                raise ValueError(f"{self.name}: moment constraint needs a criterion")
            if self.relation == "eq":
                raise ValueError(f"{self.name}: equality constraints must be integral constraints")
        else:
            if self.channel is None:
                raise ValueError(f"{self.name}: integral constraint needs a channel")
            if self.relation == "eq" and self.continuity != "continuous":
                raise ValueError(f"{self.name}: equality constraints need a continuous integrand")

    @property
    def is_equality(self) -> bool:
        return self.relation == "eq"

    def integrand(self, space: CandidateSpace) -> np.ndarray:
        return self.scale * space.channel(self.channel) + self.offset


@dataclass(frozen=True, eq=False)
class Problem:
    space: CandidateSpace
    objective: Criterion = Criterion("D")
    constraints: tuple[Constraint, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        names = [c.name for c in self.constraints]
        if len(set(names)) != len(names):
            raise ValueError("constraint names must be unique")
        for c in self.constraints:
            if c.kind == "integral":
                self.space.channel(c.channel)

    @property
    def inequality_mask(self) -> np.ndarray:
        return np.array([not c.is_equality for c in self.constraints], dtype=bool)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.constraints]


@dataclass(frozen=True, eq=False)
class Design:
    """Finitely supported design: ``weights[j]`` sits on candidate ``indices[j]``."""

    space: CandidateSpace
    indices: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if idx.shape != w.shape:
            raise ValueError("indices and weights differ in length")
        if idx.size == 0:
            raise ValueError("design has no support")
        if np.any(idx < 0) or np.any(idx >= len(self.space)):
            raise ValueError("design index out of range")
        if len(np.unique(idx)) != idx.size:
            raise ValueError("design indices must be unique")
        if np.any(w < 0):
            raise ValueError("negative design weight")
        if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        order = np.argsort(idx)
        object.__setattr__(self, "indices", idx[order])
        object.__setattr__(self, "weights", w[order])

    @classmethod
    def uniform(cls, space: CandidateSpace, indices) -> "Design":
        idx = np.asarray(indices, dtype=np.int64)
        return cls(space, idx, np.full(idx.size, 1.0 / idx.size))

    @classmethod
    def point(cls, space: CandidateSpace, index: int) -> "Design":
        return cls(space, [index], [1.0])

    def support(self, floor: float = 0.0) -> np.ndarray:
        return self.indices[self.weights > floor]

    def pruned(self, floor: float) -> "Design":
        """Drop weights at or below ``floor`` and renormalise."""
        keep = self.weights > floor
        w = self.weights[keep]
        return Design(self.space, self.indices[keep], w / w.sum())

    def dense(self) -> np.ndarray:
        out = np.zeros(len(self.space))
        out[self.indices] = self.weights
        return out


def info_matrix(design: Design) -> np.ndarray:
    packed = design.weights @ design.space.info[design.indices]
    return linalg.unpack(packed, design.space.d_theta)


def criterion_value(kind: Criterion, M: np.ndarray) -> float:
    """``Phi(M) + kind.offset``; ``+inf`` when ``M`` is singular."""
    try:
        L = linalg.cholesky(M)
    except SingularMatrixError:
        return math.inf
    if kind.tag == "D":
        val = -2.0 * float(np.sum(np.log(np.diag(L))))
    else:
        val = float(np.trace(linalg.cho_solve(L, np.eye(M.shape[0]))))
    return val + kind.offset


def criterion_gradient_form(kind: Criterion, M: np.ndarray) -> Callable[[np.ndarray], float]:
    """The derivative ``H -> DPhi(M)(H)`` as a callable."""
    G = kind.gradient_matrix(M)
    return lambda H: linalg.trace_product(G, H)


def constraint_value(c: Constraint, design: Design) -> float:
    if c.kind == "moment":
        return criterion_value(c.criterion, info_matrix(design)) + c.offset
    ch = design.space.channel(c.channel)[design.indices]
    return c.scale * float(design.weights @ ch) + c.offset


def constraint_values(problem: Problem, design: Design) -> np.ndarray:
    return np.array([constraint_value(c, design) for c in problem.constraints])


def objective_value(problem: Problem, design: Design) -> float:
    return criterion_value(problem.objective, info_matrix(design))


@dataclass
class SensitivityKernel:
    """Lagrangian sensitivity at a fixed ``(design, multipliers)`` pair.

    ``psi_L(x) = pack(m(x)) @ coef + sum_c channel_coef[c] * channel_c(x) + const``.
    """

    space: CandidateSpace
    coef: np.ndarray
    channel_coef: dict[str, float] = field(default_factory=dict)
    const: float = 0.0

    def __call__(self, indices=None) -> np.ndarray:
        if indices is None:
            return self.evaluate(0, len(self.space))
        idx = np.asarray(indices, dtype=np.int64)
        out = self.space.info[idx] @ self.coef + self.const
        for name, a in self.channel_coef.items():
            out = out + a * self.space.channel(name)[idx]
        return out

    def evaluate(self, start: int, stop: int) -> np.ndarray:
        out = self.space.info[start:stop] @ self.coef + self.const
        for name, a in self.channel_coef.items():
            out += a * self.space.channel(name)[start:stop]
        return out


def _term_kernel(kind: Criterion, M: np.ndarray, weight: float):
    try:
        G = kind.gradient_matrix(M)
    except SingularMatrixError:
        raise DomainError("information matrix is singular; sensitivity undefined") from None
    return weight * linalg.packed_trace_weights(G), -weight * linalg.trace_product(G, M)


def sensitivity_kernel(problem: Problem, design: Design, lam: Sequence[float] | None = None, include_objective: bool = True) -> SensitivityKernel:
    """Build the kernel of ``psi_0 + sum_i lam_i psi_i`` at ``design``.

    Raises
    ------
    DomainError
        If a moment term is evaluated at a singular information matrix.
    """
    lam = np.zeros(len(problem.constraints)) if lam is None else np.asarray(lam, dtype=float)
    if lam.shape != (len(problem.constraints),):
        raise ValueError("one multiplier per constraint expected")
    space = problem.space
    M = info_matrix(design)
    coef = np.zeros(space.info.shape[1])
    const = 0.0
    if include_objective:
        a, b = _term_kernel(problem.objective, M, 1.0)
        coef += a
        const += b
    channels: dict[str, float] = {}
    for c, l in zip(problem.constraints, lam):
        if l == 0.0:
            continue
        if c.kind == "moment":
            a, b = _term_kernel(c.criterion, M, l)
            coef += a
            const += b
        else:
            ch = space.channel(c.channel)
            channels[c.channel] = channels.get(c.channel, 0.0) + l * c.scale
            const -= l * c.scale * float(design.weights @ ch[design.indices])
    return SensitivityKernel(space, coef, channels, const)


def sensitivity(problem: Problem, which: int, design: Design, x=None) -> np.ndarray | float:
    """Sensitivity of the objective (``which=0``) or constraint ``which-1``.

    ``x`` is a candidate index, an index array, or ``None`` for all points.
    """
    lam = np.zeros(len(problem.constraints))
    if which == 0:
        kern = sensitivity_kernel(problem, design, lam)
    else:
        lam[which - 1] = 1.0
        kern = sensitivity_kernel(problem, design, lam, include_objective=False)
    return _at(kern, x)


def lagrangian_sensitivity(problem: Problem, design: Design, lam, x=None) -> np.ndarray | float:
    return _at(sensitivity_kernel(problem, design, lam), x)


def _at(kern: SensitivityKernel, x):
    if x is None:
        return kern()
    if np.ndim(x) == 0:
        return float(kern([int(x)])[0])
    return kern(x)
