"""Adaptive discretization algorithms and their certificates.

Both algorithms keep a growing finite subspace ``X^k`` of the candidate
space. Each iteration solves the weight problem on ``X^k`` to a saddle
point ``(xi^k, lambda^k)`` and then looks for a candidate where the
Lagrangian sensitivity ``psi_L(xi^k, lambda^k, .)`` is negative:

* :func:`run_special` (``epsilon = 0``) always minimises ``psi_L`` over the
  whole space and adds the minimiser unless ``min - delta_k >= 0``.
* :func:`run_general` (``epsilon > 0``) first runs a cheap violator search
  and falls back to exact minimisation only when it finds nothing; it stops
  once ``min - delta_k >= -epsilon``.

The exact minimisation is a full scan, so at termination of
:func:`run_general` the certified gap ``epsilon_star = |min psi_L|`` is at
most ``epsilon``.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator, TextIO

import numpy as np
from scipy.optimize import minimize_scalar

from . import linalg
from .criteria import (
    Criterion,
    Design,
    Problem,
    SensitivityKernel,
    constraint_values,
    criterion_value,
    info_matrix,
    objective_value,
    sensitivity_kernel,
)
from .errors import CoedError, Infeasible, MaxIterations, NotFeasible, PreflightFailed, SolverError
from .model import CandidateSpace
from .solver import SaddlePoint, SolverTolerances, max_reach, phase1_feasible, solve_saddle

log = logging.getLogger(__name__)

SCAN_CHUNK = 1 << 16
PREFLIGHT_MARGIN = 1e-6
REACH_TOL = 1e-9


# ---------------------------------------------------------------------------
# settings and records


@dataclass(frozen=True)
class SearchSettings:
    """Violator search: ``none``, ``neighbor`` or ``enumerate``."""

    mode: str = "neighbor"
    radius: int = 1
    starts: int = 64

    def __post_init__(self):
        if self.mode not in ("none", "neighbor", "enumerate"):
            raise ValueError(f"unknown search mode {self.mode!r}")
        if self.radius < 1 or self.starts < 0:
            raise ValueError("radius must be >= 1 and starts >= 0")


@dataclass(frozen=True)
class AlgoSettings:
    """Algorithm parameters.

    ``delta`` is either a constant tolerance or a callable ``k -> delta_k``.
    """

    epsilon: float = 1e-3
    delta: float | Callable[[int], float] = 1e-4
    max_iterations: int = 200
    search: SearchSettings = field(default_factory=SearchSettings)
    seed: int = 0
    threads: int = 1
    tol: SolverTolerances = field(default_factory=SolverTolerances)

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be non-negative")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")
        if self.threads < 1:
            raise ValueError("threads must be positive")
        if self.epsilon == 0 and self.search.mode != "none":
            raise ValueError("epsilon = 0 requires search mode 'none'")
        if not callable(self.delta):
            if not self.delta > 0:
                raise ValueError("delta must be positive")
            if self.epsilon > 0 and not self.delta < self.epsilon:
                raise ValueError("constant delta must be smaller than epsilon")

    def delta_k(self, k: int) -> float:
        d = float(self.delta(k)) if callable(self.delta) else float(self.delta)
        if not d > 0:
            raise ValueError(f"delta_{k} = {d} is not positive")
        return d


@dataclass
class IterationRecord:
    k: int
    subspace_size: int
    criterion: float
    constraint_values: list[float]
    lam: list[float]
    min_psiL: float | None
    argmin_index: int | None
    added: bool
    violator_via: str
    added_index: int | None = None
    added_value: float | None = None
    delta: float = 0.0
    solver_iterations: int = 0
    kkt_residual: float = 0.0
    elapsed: float = 0.0

    def to_dict(self) -> dict:
        return {"type": "iteration", **asdict(self)}


class RunTrace:
    """Append-only iteration log, optionally mirrored to a JSON-lines file."""

    def __init__(self, sink: TextIO | None = None):
        self.records: list[IterationRecord] = []
        self.warnings: list[str] = []
        self.subspaces: list[list[int]] = []
        self.status: str | None = None
        self._sink = sink

    def append(self, rec: IterationRecord, subspace: list[int]) -> None:
        self.records.append(rec)
        self.subspaces.append(list(subspace))
        self._write(rec.to_dict())

    def warn(self, message: str) -> None:
        log.warning(message)
        self.warnings.append(message)
        self._write({"type": "warning", "message": message})

    def finish(self, status: str, **extra) -> None:
        self.status = status
        self._write({"type": "termination", "status": status, **extra})

    def _write(self, obj: dict) -> None:
        if self._sink is not None:
            self._sink.write(json.dumps(obj, sort_keys=True) + "\n")
            self._sink.flush()

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class Certificate:
    epsilon_star: float
    argmin_index: int
    feasibility_report: dict[str, float]
    support_bound: int
    support_actual: int
    subspace_size: int
    criterion: float

    def __post_init__(self):
        if self.epsilon_star < 0:
            raise ValueError("epsilon_star must be non-negative")
        if self.support_actual > self.subspace_size:
            raise ValueError("support larger than the subspace")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunResult:
    design: Design
    lam: np.ndarray
    certificate: Certificate
    trace: RunTrace
    status: str
    subspace: np.ndarray

    def __iter__(self) -> Iterator:
        return iter((self.design, self.lam, self.certificate, self.trace))

    @property
    def iterations(self) -> int:
        """Number of refinements performed (the final ``k``)."""
        return len(self.trace) - 1

    @property
    def certified(self) -> bool:
        return self.status in ("certified", "duplicate")


@dataclass
class PreflightReport:
    eta0: Design
    reach: list[float]
    support_bound: int

    @property
    def ok(self) -> bool:
        return True


# ---------------------------------------------------------------------------
# building blocks


def support_bound(problem: Problem) -> int:
    """Caratheodory bound on the support size of an optimal design.

    All moment maps in a problem share the candidate information matrices,
    so the objective and every moment constraint contribute a single
    ``d_theta (d_theta + 1) / 2`` term. Integral inequalities and equalities
    add one each.
    """
    p = linalg.packed_size(problem.space.d_theta)
    n_int_ineq = sum(1 for c in problem.constraints if c.kind == "integral" and not c.is_equality)
    n_eq = sum(1 for c in problem.constraints if c.is_equality)
    return p + n_int_ineq + n_eq + 1


def _unique(indices) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64).ravel()
    _, first = np.unique(idx, return_index=True)
    return idx[np.sort(first)]


def preflight(space: CandidateSpace, problem: Problem, X0, tol: SolverTolerances = SolverTolerances()) -> PreflightReport:
    """Check the regularity conditions on the initial subspace ``X0``.

    Raises
    ------
    PreflightFailed
        With clause ``strict_feasibility`` or ``non_one_sidedness``.
    """
    if problem.space is not space:
        raise ValueError("problem is defined on a different candidate space")
    X0 = _unique(X0)
    if X0.size == 0:
        raise PreflightFailed("strict_feasibility", "X0 is empty")
    try:
        eta0 = phase1_feasible(problem, X0, margin=PREFLIGHT_MARGIN, tol=tol)
    except SolverError as exc:
        raise PreflightFailed("strict_feasibility", str(exc)) from exc
    if not linalg.is_nonsingular(info_matrix(eta0)):
        raise PreflightFailed("strict_feasibility", "information matrix of the feasible design is singular")

    eq = [c for c in problem.constraints if c.is_equality]
    reach: list[float] = []
    if eq:
        G = np.vstack([c.integrand(space)[X0] for c in eq])
        for j in range(len(eq)):
            for sign in (1.0, -1.0):
                direction = np.zeros(len(eq))
                direction[j] = sign
                r = max_reach(G, direction)
                reach.append(r)
                if not r > REACH_TOL:
                    raise PreflightFailed(
                        "non_one_sidedness",
                        f"equality values on X0 cannot reach direction {'+' if sign > 0 else '-'}{eq[j].name} (max {r:.3g})",
                    )
    return PreflightReport(eta0, reach, support_bound(problem))


def min_sensitivity(kernel: SensitivityKernel, threads: int = 1) -> tuple[int, float]:
    """Exact minimiser of ``psi_L`` over the whole space, lowest index on ties.

    The scan uses fixed chunk boundaries so the result does not depend on
    the number of threads.
    """
    n = len(kernel.space)
    starts = range(0, n, SCAN_CHUNK)

    def chunk_min(lo: int) -> tuple[float, int]:
        vals = kernel.evaluate(lo, min(lo + SCAN_CHUNK, n))
        j = int(np.argmin(vals))
        return float(vals[j]), lo + j

    if threads > 1 and n > SCAN_CHUNK:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(chunk_min, starts))
    else:
        parts = [chunk_min(lo) for lo in starts]
    value, index = min(parts)
    return index, value


def search_violator(
    kernel: SensitivityKernel,
    design: Design,
    epsilon: float,
    search: SearchSettings,
    rng: np.random.Generator,
    exclude=None,
    threads: int = 1,
) -> int | None:
    """Return a candidate with ``psi_L < -epsilon`` or ``None``.

    ``neighbor`` mode scans the grid neighbours of the support points (by
    index), then ``search.starts`` random candidates (in draw order). The
    first violator found seeds a steepest neighbour descent whose end point
    is returned. ``enumerate`` mode returns the exact minimiser when it
    violates.
    """
    if search.mode == "none":
        raise ValueError("search mode 'none' has no violator search")
    excluded = np.zeros(len(kernel.space), dtype=bool)
    if exclude is not None:
        excluded[np.asarray(exclude, dtype=np.int64)] = True
    if search.mode == "enumerate":
        j, v = min_sensitivity(kernel, threads)
        return j if v < -epsilon and not excluded[j] else None
    space = design.space
    nb = space.neighbors(design.indices, search.radius)
    draws = rng.integers(0, len(space), size=search.starts) if search.starts else np.zeros(0, dtype=np.int64)
    for cand in (nb, draws):
        cand = cand[~excluded[cand]]
        if cand.size == 0:
            continue
        vals = kernel(cand)
        hit = np.flatnonzero(vals < -epsilon)
        if hit.size:
            return _descend(kernel, int(cand[hit[0]]), float(vals[hit[0]]), excluded, search.radius)
    return None


def _descend(kernel: SensitivityKernel, j: int, value: float, excluded: np.ndarray, radius: int) -> int:
    """Steepest neighbour descent on ``psi_L`` from candidate ``j``."""
    space = kernel.space
    while True:
        nb = space.neighbors([j], radius)
        nb = nb[~excluded[nb]]
        if nb.size == 0:
            return j
        vals = kernel(nb)
        best = int(np.argmin(vals))
        if not vals[best] < value:
            return j
        j, value = int(nb[best]), float(vals[best])


def certify(problem: Problem, design: Design, lam, subspace=None, tol: SolverTolerances = SolverTolerances(), threads: int = 1) -> Certificate:
    """Optimality certificate of a feasible design with multipliers.

    Raises
    ------
    NotFeasible
        If feasibility, multiplier signs or complementarity fail.
    """
    lam = np.asarray(lam, dtype=float)
    vals = constraint_values(problem, design)
    report = {}
    for c, v, l in zip(problem.constraints, vals, lam):
        report[c.name] = float(v)
        if c.is_equality:
            if abs(v) > tol.feas:
                raise NotFeasible(f"{c.name} = {v:.3e} violates the equality")
        else:
            if v > tol.feas:
                raise NotFeasible(f"{c.name} = {v:.3e} violates the inequality")
            if l < -1e-12:
                raise NotFeasible(f"negative multiplier {l:.3e} for {c.name}")
            if abs(l * v) > tol.comp:
                raise NotFeasible(f"complementarity {l * v:.3e} for {c.name}")
    kernel = sensitivity_kernel(problem, design, lam)
    j, v = min_sensitivity(kernel, threads)
    sub = design.indices.size if subspace is None else len(subspace)
    return Certificate(
        epsilon_star=abs(min(v, 0.0)),
        argmin_index=int(j),
        feasibility_report=report,
        support_bound=support_bound(problem),
        support_actual=int(design.indices.size),
        subspace_size=int(sub),
        criterion=objective_value(problem, design),
    )


# ---------------------------------------------------------------------------
# algorithms


def _run(space: CandidateSpace, problem: Problem, X0, settings: AlgoSettings, special: bool, trace: RunTrace | None) -> RunResult:
    trace = RunTrace() if trace is None else trace
    report = preflight(space, problem, X0, settings.tol)
    X = list(int(i) for i in _unique(X0))
    in_X = set(X)
    rng = np.random.default_rng(settings.seed)
    start: tuple[Design, np.ndarray | None] = (report.eta0, None)
    status = "max_iterations"
    sp: SaddlePoint | None = None
    kernel = None
    k = 0
    t0 = time.perf_counter()
    while True:
        try:
            sp = solve_saddle(problem, X, start, settings.tol)
        except CoedError as exc:
            exc.trace = trace
            raise
        kernel = sensitivity_kernel(problem, sp.design, sp.lam)
        delta = settings.delta_k(k)
        crit = objective_value(problem, sp.design)
        rec = IterationRecord(
            k=k,
            subspace_size=len(X),
            criterion=crit,
            constraint_values=[float(v) for v in constraint_values(problem, sp.design)],
            lam=[float(v) for v in sp.lam],
            min_psiL=None,
            argmin_index=None,
            added=False,
            violator_via="enumeration",
            delta=delta,
            solver_iterations=sp.iterations,
            kkt_residual=sp.kkt_residual,
        )
        new = None
        if not special and settings.search.mode != "none":
            j = search_violator(kernel, sp.design, settings.epsilon, settings.search, rng, exclude=X, threads=settings.threads)
            if j is not None:
                new = j
                rec.violator_via = "search"
                rec.added_value = float(kernel([j])[0])
                if settings.search.mode == "enumerate":
                    rec.min_psiL, rec.argmin_index = rec.added_value, int(j)
        if new is None:
            j, v = min_sensitivity(kernel, settings.threads)
            rec.min_psiL, rec.argmin_index = v, int(j)
            threshold = 0.0 if special else -settings.epsilon
            if v - delta >= threshold:
                status = "certified"
            elif j in in_X:
                status = "duplicate"
                trace.warn(f"DuplicateCandidate: exact minimiser {j} (psi_L = {v:.3e}) is already in the subspace at k = {k}")
            else:
                new = j
                rec.added_value = v
        if new is not None and k >= settings.max_iterations:
            new = None
            status = "max_iterations"
        if new is not None:
            rec.added, rec.added_index = True, int(new)
        rec.elapsed = time.perf_counter() - t0
        trace.append(rec, X)
        if new is None:
            break
        X.append(int(new))
        in_X.add(int(new))
        start = (sp.design, sp.lam)
        k += 1

    cert = certify(problem, sp.design, sp.lam, X, settings.tol, settings.threads)
    trace.finish(status, iterations=k, epsilon_star=cert.epsilon_star, criterion=cert.criterion)
    if status == "max_iterations":
        log.warning("iteration limit %d reached; returning the last iterate", settings.max_iterations)
    return RunResult(sp.design, sp.lam, cert, trace, status, np.asarray(X, dtype=np.int64))


def run_special(space: CandidateSpace, problem: Problem, X0, settings: AlgoSettings | None = None, trace: RunTrace | None = None) -> RunResult:
    """Adaptive discretization with ``epsilon = 0`` and exact minimisation each step."""
    settings = AlgoSettings(epsilon=0.0, search=SearchSettings("none")) if settings is None else settings
    if settings.epsilon != 0:
        raise ValueError("run_special requires epsilon = 0")
    return _run(space, problem, X0, settings, True, trace)


def run_general(space: CandidateSpace, problem: Problem, X0, settings: AlgoSettings | None = None, trace: RunTrace | None = None) -> RunResult:
    """Adaptive discretization with ``epsilon > 0`` and a violator search."""
    settings = AlgoSettings() if settings is None else settings
    if not settings.epsilon > 0:
        raise ValueError("run_general requires epsilon > 0")
    return _run(space, problem, X0, settings, False, trace)


def vertex_direction_oracle(
    space: CandidateSpace,
    criterion: Criterion = Criterion("D"),
    max_iter: int = 100_000,
    tol: float = 1e-4,
    start=None,
) -> Design:
    """Classical vertex-direction method with exact line search.

    Starts from the uniform design on ``start`` (default: all candidates)
    and moves towards the point mass at the sensitivity minimiser until
    ``min psi_0 >= -tol``. The D step length has a closed form; the A step
    uses a bounded scalar search.

    Raises
    ------
    MaxIterations
    """
    idx = np.arange(len(space)) if start is None else _unique(start)
    w = np.zeros(len(space))
    w[idx] = 1.0 / idx.size
    info = space.info
    d = space.d_theta
    M = linalg.unpack(w @ info, d)
    for it in range(max_iter + 1):
        G = criterion.gradient_matrix(M)
        psi = info @ linalg.packed_trace_weights(G) - linalg.trace_product(G, M)
        j = int(np.argmin(psi))
        if psi[j] >= -tol:
            break
        if it == max_iter:
            raise MaxIterations(f"vertex-direction method did not reach tolerance {tol} in {max_iter} iterations")
        mj = space.matrix(j)
        if criterion.tag == "D":
            # maximiser of log det((1-a) M + a m_j) along the segment
            r = -linalg.trace_product(G, mj)
            a = (r - d) / (d * (r - 1.0))
        else:
            res = minimize_scalar(
                lambda a: criterion_value(criterion, (1.0 - a) * M + a * mj),
                bounds=(0.0, 1.0),
                method="bounded",
                options={"xatol": 1e-12},
            )
            a = float(res.x)
        a = min(max(a, 0.0), 1.0)
        w *= 1.0 - a
        w[j] += a
        M = (1.0 - a) * M + a * mj
    support = np.flatnonzero(w > 0)
    return Design(space, support, w[support] / w[support].sum())


def kinetics_initial_subset(space: CandidateSpace, size: int = 20, time_max: float = 5.0, roi_min: float = 4.0) -> np.ndarray:
    """Initial subspace for the kinetics examples.

    Scans ``{t_m < time_max, roi > roi_min}`` in candidate order, keeps the
    points that raise the rank of the running information sum until it is
    nonsingular, then fills up to ``size`` points in candidate order.
    """
    pool = np.flatnonzero((space.channel("time") < time_max) & (space.channel("roi") > roi_min))
    if pool.size == 0:
        raise Infeasible("no candidate meets the time and roi requirements")
    d = space.d_theta
    # Jacobi scaling: parameter sensitivities differ by many orders of magnitude
    diag = np.mean(np.diagonal(space.matrices(pool), axis1=1, axis2=2), axis=0)
    scale = 1.0 / np.sqrt(np.where(diag > 0, diag, 1.0))
    chosen: list[int] = []
    S = np.zeros((d, d))
    rank = 0
    for i in pool:
        T = S + space.matrix(int(i)) * np.outer(scale, scale)
        r = np.linalg.matrix_rank(T, tol=1e-10 * max(1.0, np.abs(T).max()))
        if r > rank:
            chosen.append(int(i))
            S, rank = T, r
            if rank == d:
                break
    if rank < d:
        raise Infeasible("the admissible candidates do not span the parameter space")
    for i in pool:
        if len(chosen) >= size:
            break
        if int(i) not in chosen:
            chosen.append(int(i))
    return np.sort(np.asarray(chosen, dtype=np.int64))
