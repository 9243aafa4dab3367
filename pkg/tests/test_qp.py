# tests/test_qp.py
import itertools
import time

import numpy as np
import pytest

from core.errors import InputError
from core.qp import ActiveSetSolver, QpProblem, QpStatus, dump_problem, kkt_residuals, load_problem, solve


def random_problem(rng, n, p, q):
    M = rng.normal(size=(n, n))
    H = M @ M.T + 0.1 * np.eye(n)
    g = rng.normal(size=n)
    x0 = rng.normal(size=n)
    A = rng.normal(size=(p, n))
    C = rng.normal(size=(q, n))
    return QpProblem(H, g, A, A @ x0, C, C @ x0 + rng.uniform(0.0, 1.0, q))


def enumerate_optimum(P: QpProblem) -> float:
    """Minimum objective over every active set whose equality-constrained optimum is feasible."""
    best = np.inf
    for k in range(P.n_ineq + 1):
        for active in itertools.combinations(range(P.n_ineq), k):
            E = np.vstack([P.A, P.C[list(active)]])
            e = np.concatenate([P.b, P.d[list(active)]])
            m = len(E)
            K = np.block([[P.H, E.T], [E, np.zeros((m, m))]])
            rhs = np.concatenate([-P.g, e])
            s = np.linalg.lstsq(K, rhs, rcond=None)[0]
            x = s[: P.n]
            if np.max(np.abs(E @ x - e), initial=0.0) > 1e-9:
                continue
            if P.n_ineq and np.max(P.C @ x - P.d) > 1e-9:
                continue
            best = min(best, P.objective(x))
    return best


def test_random_problems_match_enumeration():
    rng = np.random.default_rng(7)
    start = time.monotonic()
    solver = ActiveSetSolver()
    for _ in range(100):
        n = int(rng.integers(1, 7))
        p = int(rng.integers(0, min(n, 3)))
        q = int(rng.integers(0, 9))
        P = random_problem(rng, n, p, q)
        sol = solver.solve(P)
        assert sol.status == QpStatus.OPTIMAL
        oracle = enumerate_optimum(P)
        assert P.objective(sol.x) == pytest.approx(oracle, rel=1e-6, abs=1e-9)
        assert all(v <= 1e-6 for v in kkt_residuals(P, sol).values())
    assert time.monotonic() - start < 10.0


def test_unconstrained_minimum():
    P = QpProblem(np.diag([2.0, 4.0]), [-2.0, -4.0])
    sol = solve(P)
    np.testing.assert_allclose(sol.x, [1.0, 1.0], atol=1e-10)


def test_box_constraint_binds():
    # min (x - 2)^2 subject to x <= 1
    P = QpProblem([[2.0]], [-4.0], C=[[1.0]], d=[1.0])
    sol = solve(P)
    assert sol.x[0] == pytest.approx(1.0)
    assert sol.ineq_multipliers[0] == pytest.approx(2.0)
    assert sol.active == (0,)


def test_infeasible_reported():
    P = QpProblem(np.eye(1), [0.0], C=[[1.0], [-1.0]], d=[-1.0, -1.0])
    sol = solve(P)
    assert sol.status == QpStatus.INFEASIBLE
    assert not sol.ok


def test_warm_start_reuses_active_set():
    rng = np.random.default_rng(3)
    P = random_problem(rng, 4, 1, 6)
    solver = ActiveSetSolver()
    cold = solver.solve(P)
    warm = solver.solve(P, warm_start=cold)
    np.testing.assert_allclose(warm.x, cold.x, atol=1e-8)
    assert warm.iterations <= cold.iterations


def test_non_symmetric_hessian_rejected():
    with pytest.raises(InputError):
        QpProblem([[1.0, 1.0], [0.0, 1.0]], [0.0, 0.0])


def test_dump_and_load(tmp_path):
    rng = np.random.default_rng(11)
    P = random_problem(rng, 3, 1, 2)
    path = tmp_path / "p.qp"
    dump_problem(P, path)
    Q = load_problem(path)
    for name in ("H", "g", "A", "b", "C", "d"):
        np.testing.assert_array_equal(getattr(Q, name), getattr(P, name))


def test_load_rejects_other_files(tmp_path):
    path = tmp_path / "x.qp"
    path.write_text("hello\n")
    with pytest.raises(InputError):
        load_problem(path)
