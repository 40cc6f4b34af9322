"""Acceptance suite: one recorded pass/fail line per criterion.

The lines are printed in the ``acceptance criteria`` section of the pytest
terminal summary. Reference values that the implementation does not
reproduce are left as honest failures.
"""

import functools
import itertools
import json
import math
import time
from importlib import resources

import numpy as np
import pytest

from coed import cli, linalg
from coed.adaptive import AlgoSettings, SearchSettings, run_general, run_special, support_bound, vertex_direction_oracle
from coed.criteria import Constraint, Criterion, Design, Problem, constraint_values, info_matrix, objective_value, sensitivity
from coed.model import KINETICS_THETA, CandidateSpace, build_exponential_space
from coed.ode import AugmentedState, integrate, solve_kinetics

from conftest import a_bound_problem, idx, indicator_problem, record_acceptance

GENERAL = AlgoSettings(epsilon=1e-3, delta=1e-4, search=SearchSettings("enumerate"))
CONFIGS = resources.files("coed") / "configs"


def check(name, ok, detail):
    return (name, bool(ok), detail)


def near(name, got, want, tol):
    return check(name, abs(got - want) <= tol, f"{got:.6g} vs {want:.6g} +- {tol:g}")


def support_matches(space, design, points, weights, ptol, wtol):
    xs = space.coords[design.indices, 0]
    if len(xs) != len(points):
        return False, f"support {np.round(xs, 4).tolist()}"
    ok = np.all(np.abs(xs - points) <= ptol) and np.all(np.abs(design.weights - weights) <= wtol)
    return ok, f"support {np.round(xs, 4).tolist()} weights {np.round(design.weights, 4).tolist()}"


@pytest.fixture(scope="module")
def space():
    return build_exponential_space()


def test_criterion_1_unconstrained_exponential(space):
    t = time.perf_counter()
    res = run_general(space, Problem(space), idx(space, -1.0, 0.0), GENERAL)
    elapsed = time.perf_counter() - t
    ok, detail = support_matches(space, res.design, [0.672, 1.0], [0.5, 0.5], 0.005, 0.01)
    record_acceptance(
        "1",
        [
            check("status", res.certified, res.status),
            near("Psi0", res.certificate.criterion, -6.4162, 1e-3),
            check("eps*", res.certificate.epsilon_star <= 1e-3, f"{res.certificate.epsilon_star:.4e}"),
            check("design", ok, detail),
            check("iterations", res.iterations <= 5, str(res.iterations)),
            check("runtime", elapsed < 5.0, f"{elapsed:.2f}s"),
        ],
    )


def test_criterion_2_indicator_and_equality(space):
    problem = indicator_problem(space)
    res = run_general(space, problem, idx(space, -1.0, 0.0), GENERAL)
    vals = constraint_values(problem, res.design)
    ok, detail = support_matches(space, res.design, [-1.0, 0.0, 0.679, 1.0], [0.5846, 0.3154, 0.0285, 0.0715], 0.005, 0.01)
    record_acceptance(
        "2",
        [
            check("status", res.certified, res.status),
            near("Psi0", res.certificate.criterion, -2.6738, 1e-3),
            check("Psi1", abs(vals[0]) <= 1e-6, f"{vals[0]:.3e}"),
            check("Psi2", abs(vals[1]) <= 1e-8, f"{vals[1]:.3e}"),
            check("design", ok, detail),
            check("iterations", res.iterations <= 8, str(res.iterations)),
        ],
    )


def test_criterion_3_a_bound_and_equality(space):
    problem = a_bound_problem(space)
    res = run_general(space, problem, idx(space, -1.0, 0.0, 1.0), GENERAL)
    vals = constraint_values(problem, res.design)
    xs = space.coords[res.design.indices, 0]
    points_ok = len(xs) == 3 and np.all(np.abs(xs - [-1.0, 0.626, 1.0]) <= 0.005)
    record_acceptance(
        "3",
        [
            check("status", res.certified, res.status),
            near("Psi0", res.certificate.criterion, -3.8456, 1e-3),
            near("Psi1", vals[0], -2.6412, 0.02),
            check("support", points_ok, str(np.round(xs, 4).tolist())),
            check("support bound", res.certificate.support_actual <= 5 and res.certificate.support_bound == 5, f"{res.certificate.support_actual} <= {res.certificate.support_bound}"),
        ],
    )


KINETICS_TABLE = [
    ((5, 0.8, 0.1, 0.1, 300), (0.542, 0.346, 0.112), 3.4563),
    ((10, 0.8, 0.1, 0.1, 300), (0.429, 0.430, 0.141), 4.2998),
    ((10, 0.5, 0.4, 0.1, 300), (0.357, 0.468, 0.175), 1.1691),
    ((2, 0.8, 0.1, 0.1, 700), (0.535, 0.352, 0.113), 3.5151),
    ((10, 0.8, 0.1, 0.1, 700), (0.302, 0.436, 0.262), 4.3586),
    ((10, 0.5, 0.4, 0.1, 700), (0.284, 0.420, 0.296), 1.0500),
]


def test_criterion_4_kinetics_spot_checks():
    checks = []
    for (t, a, b, c, T), fractions, roi in KINETICS_TABLE:
        s = integrate(AugmentedState.initial([a, b, c]), T, KINETICS_THETA, t).s
        err = float(np.max(np.abs(s - fractions)))
        got_roi = s[1] / b
        label = f"({t},{a},{b},{c},{T})"
        checks.append(check(label, err <= 0.002 and abs(got_roi - roi) <= 0.01, f"max|ds| {err:.1e} roi {got_roi:.4f}"))
    record_acceptance("4", checks)


def _cli_run(tmp_path, name):
    doc = json.loads((CONFIGS / f"{name}.json").read_text())
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(doc))
    out = tmp_path / name
    t = time.perf_counter()
    code = cli.main(["run", str(path), "--output", str(out)])
    elapsed = time.perf_counter() - t
    cert = json.loads((out / "certificate.json").read_text()) if (out / "certificate.json").exists() else {}
    return code, cert, elapsed


def test_criterion_5_kinetics_coarse_substitute(tmp_path):
    checks = []
    for name in ("kinetics_coarse_unconstrained", "kinetics_coarse_constrained"):
        code, cert, elapsed = _cli_run(tmp_path, name)
        tag = name.split("_")[-1]
        checks.append(check(f"{tag} status", code == 0 and cert.get("status") in ("certified", "duplicate"), f"exit {code} {cert.get('status')}"))
        eps = cert.get("epsilon_star", math.inf)
        checks.append(check(f"{tag} eps*", eps <= 1e-3, f"{eps:.3e}"))
        viol = max([0.0, *cert.get("constraint_values", {}).values()])
        checks.append(check(f"{tag} constraints", viol <= 1e-6, f"max {viol:.1e}"))
        checks.append(check(f"{tag} support", cert.get("support_actual", 99) <= 24, str(cert.get("support_actual"))))
        checks.append(check(f"{tag} runtime", elapsed < 120, f"{elapsed:.1f}s"))
        checks.append(check(f"{tag} Psi0 (reported)", True, f"{cert.get('criterion', math.nan):.4f}"))
    record_acceptance("5 (coarse CI substitute)", checks)


@pytest.mark.slow
def test_criterion_5_kinetics_full_grid(tmp_path):
    checks = []
    for name, want in (("kinetics_unconstrained", 22.8570), ("kinetics_constrained", 27.7649)):
        code, cert, elapsed = _cli_run(tmp_path, name)
        tag = name.split("_")[-1]
        checks.append(check(f"{tag} status", code == 0, f"exit {code} {cert.get('status')} in {elapsed:.0f}s"))
        checks.append(near(f"{tag} Psi0", cert.get("criterion", math.nan), want, 0.05))
        if tag == "constrained":
            vals = list(cert.get("constraint_values", {}).values())
            checks.append(check("Psi1, Psi2", len(vals) == 2 and all(abs(v) <= 1e-6 for v in vals), str([f"{v:.2e}" for v in vals])))
    record_acceptance("5 (full grid)", checks)


def test_criterion_6_analytic_identities(space):
    checks = []
    m0, m1 = idx(space, -1.0, 0.0)
    for alpha in np.round(np.arange(0.1, 0.91, 0.1), 10):
        M = info_matrix(Design(space, [m0, m1], [alpha, 1 - alpha]))
        det = math.exp(linalg.logdet(M))
        det_ref = alpha * (1 - alpha) * math.exp(-6)
        tr = float(np.trace(linalg.inverse_spd(M)))
        tr_ref = 2 / (1 - alpha) + math.exp(6) / alpha
        checks.append(check(f"det a={alpha:.1f}", abs(det / det_ref - 1) <= 1e-12, f"rel {abs(det / det_ref - 1):.1e}"))
        checks.append(check(f"tr a={alpha:.1f}", abs(tr / tr_ref - 1) <= 1e-10, f"rel {abs(tr / tr_ref - 1):.1e}"))
    record_acceptance("6", checks)


def test_criterion_7_property_suite(space):
    rng = np.random.default_rng(7)
    checks = []

    # gradient of the weight map against central differences
    worst = 0.0
    for tag in ("D", "A"):
        for _ in range(5):
            sub = rng.choice(len(space), 5, replace=False)
            mats = space.matrices(sub)
            w = rng.dirichlet(np.ones(5))
            crit = Criterion(tag)
            _, grad, _ = crit.weight_derivatives(mats, w)
            f = lambda v: crit.weight_derivatives(mats, v)[0]
            for j in range(5):
                # fourth-order five-point stencil keeps rounding error well below 1e-6
                h = 1e-3 * w[j]
                e = np.zeros(5)
                e[j] = h
                fd = (8 * (f(w + e) - f(w - e)) - (f(w + 2 * e) - f(w - 2 * e))) / (12 * h)
                worst = max(worst, abs(fd - grad[j]) / max(abs(grad[j]), 1.0))
    checks.append(check("gradient fd", worst <= 1e-6, f"rel {worst:.1e}"))

    # sensitivities integrate to zero against their own design
    worst = 0.0
    for problem in (Problem(space), Problem(space, Criterion("A")), a_bound_problem(space)):
        d = Design(space, idx(space, -1.0, 0.0, 0.5, 1.0), rng.dirichlet(np.ones(4)))
        for which in range(1 + len(problem.constraints)):
            psi = sensitivity(problem, which, d, d.indices)
            worst = max(worst, abs(float(d.weights @ psi)))
    checks.append(check("int psi dxi", worst <= 1e-10, f"{worst:.1e}"))

    # per-iteration saddle quality and monotone criterion trace
    kkt, monotone, bound_ok = 0.0, True, True
    for problem, X0 in ((Problem(space), idx(space, -1.0, 0.0)), (indicator_problem(space), idx(space, -1.0, 0.0)), (a_bound_problem(space), idx(space, -1.0, 0.0, 1.0))):
        res = run_general(space, problem, X0, GENERAL)
        kkt = max(kkt, max(r.kkt_residual for r in res.trace.records))
        crit = [r.criterion for r in res.trace.records]
        monotone &= all(b <= a + 1e-12 for a, b in zip(crit, crit[1:]))
        bound_ok &= res.certificate.support_actual <= support_bound(problem)
    checks.append(check("psi_L on X^k", kkt <= 1e-8, f"min >= -{kkt:.1e}"))
    checks.append(check("monotone trace", monotone, ""))
    checks.append(check("support bound", bound_ok, ""))

    # mole-fraction conservation over a random batch
    s0 = np.column_stack([a := rng.uniform(0.5, 0.8, 50), b := rng.uniform(0.1, 0.9 - a), 1 - a - b])
    out = solve_kinetics(s0, rng.uniform(300, 700, 50), KINETICS_THETA, np.arange(1.0, 11.0))
    cons = float(np.max(np.abs(out[..., :3].sum(axis=-1) - 1)))
    checks.append(check("conservation", cons <= 1e-8, f"{cons:.1e}"))

    # vertex-direction oracle against run_special
    oracle = objective_value(Problem(space), vertex_direction_oracle(space))
    special = run_special(space, Problem(space), idx(space, -1.0, 0.0)).certificate.criterion
    checks.append(check("vertex-direction", abs(oracle - special) <= 1e-3, f"{oracle:.6f} vs {special:.6f}"))
    record_acceptance("7", checks)


# exact oracle for criterion 8 -------------------------------------------------

MESH = 1000  # lattice units per unit weight, mesh 1e-3


@functools.lru_cache(maxsize=None)
def _compositions(n, k):
    """All ``k``-tuples of non-negative integers summing to ``n``."""
    if k == 1:
        return np.array([[n]])
    return np.vstack([np.column_stack([np.full(len(rest := _compositions(n - i, k - 1)), i), rest]) for i in range(n + 1)])


def _lattice_values(K, info, u, bound):
    W = K / MESH
    M = W @ info
    det = M[:, 0] * M[:, 2] - M[:, 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(det > 0, -np.log(det), np.inf)
    return np.where(W @ u <= bound + 1e-12, v, np.inf)


def lattice_search(info, u, bound):
    """Grid search over the weight simplex restricted to the mesh-1e-3 lattice.

    An exhaustive pass on the 1/50 sub-lattice is followed by exhaustive
    7^(n-1) stencils around the incumbent while the step halves to one
    lattice unit. Every evaluated point lies on the 1e-3 lattice.
    """
    n = len(u)
    K = _compositions(50, n) * (MESH // 50)
    v = _lattice_values(K, info, u, bound)
    j = int(np.argmin(v))
    best, k = float(v[j]), K[j]
    stencil = np.array(list(itertools.product(range(-3, 4), repeat=n - 1)))
    h = MESH // 50
    while True:
        while True:
            cand = k[None, :-1] + h * stencil
            cand = np.column_stack([cand, MESH - cand.sum(axis=1)])
            cand = cand[np.all(cand >= 0, axis=1)]
            v = _lattice_values(cand, info, u, bound)
            j = int(np.argmin(v))
            if not v[j] < best - 1e-15:
                break
            best, k = float(v[j]), cand[j]
        if h == 1:
            return best
        h = max(1, h // 2)


def test_criterion_8_exact_oracle_tiny_instances():
    checks = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        g = rng.standard_normal((6, 2))
        info = np.column_stack([g[:, 0] ** 2, g[:, 0] * g[:, 1], g[:, 1] ** 2])
        u = rng.uniform(-1, 1, 6)
        # the uniform design meets the bound with equality
        bound = float(np.mean(u))
        sp = CandidateSpace(np.arange(6.0), info, {"u": u})
        problem = Problem(sp, Criterion("D"), (Constraint("u_bound", "integral", channel="u", offset=-bound),))
        res = run_general(sp, problem, np.arange(6), GENERAL)
        ours = res.certificate.criterion
        brute = lattice_search(info, u, bound)
        checks.append(check(f"seed {seed}", res.certified and abs(ours - brute) <= 1e-3, f"{ours:.6f} vs {brute:.6f}"))
    record_acceptance("8", checks)
