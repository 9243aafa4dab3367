# core/qp.py
"""
Dense convex QP:

    minimize    1/2 x'Hx + g'x
    subject to  A x  = b
                C x <= d

solved with a primal active-set method. Multipliers follow the Lagrangian
``L = 1/2 x'Hx + g'x + lam'(Ax - b) + mu'(Cx - d)`` so optimal inequality
multipliers are non-negative.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from core.errors import InputError

log = logging.getLogger(__name__)


class QpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITERATIONS = "max-iterations"


def _rows(M, n: int) -> np.ndarray:
    if M is None:
        return np.zeros((0, n))
    return np.asarray(M, dtype=float).reshape(-1, n)


def _vec(v, m: int) -> np.ndarray:
    if v is None:
        return np.zeros(m)
    return np.asarray(v, dtype=float).reshape(m)


@dataclass(frozen=True, eq=False)
class QpProblem:
    H: np.ndarray
    g: np.ndarray
    A: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    C: Optional[np.ndarray] = None
    d: Optional[np.ndarray] = None

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        n = H.shape[0]
        if H.shape != (n, n):
            raise InputError(f"H must be square, got {H.shape}")
        if not np.allclose(H, H.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.abs(H).max(initial=0.0)))):
            raise InputError("H is not symmetric")
        A = _rows(self.A, n)
        C = _rows(self.C, n)
        values = dict(
            H=0.5 * (H + H.T),
            g=_vec(self.g, n),
            A=A,
            b=_vec(self.b, len(A)),
            C=C,
            d=_vec(self.d, len(C)),
        )
        for k, v in values.items():
            object.__setattr__(self, k, v)

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def n_eq(self) -> int:
        return self.A.shape[0]

    @property
    def n_ineq(self) -> int:
        return self.C.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x + self.g @ x)


@dataclass(frozen=True, eq=False)
class QpSolution:
    x: np.ndarray
    eq_multipliers: np.ndarray
    ineq_multipliers: np.ndarray
    status: QpStatus
    iterations: int
    active: tuple[int, ...] = ()
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == QpStatus.OPTIMAL


def kkt_residuals(problem: QpProblem, sol: QpSolution) -> dict[str, float]:
    x, lam, mu = sol.x, sol.eq_multipliers, sol.ineq_multipliers
    P = problem
    slack = P.C @ x - P.d
    grad = P.H @ x + P.g + P.A.T @ lam + P.C.T @ mu
    return {
        "stationarity": float(np.max(np.abs(grad), initial=0.0)),
        "primal_eq": float(np.max(np.abs(P.A @ x - P.b), initial=0.0)),
        "primal_ineq": float(np.max(slack, initial=0.0)),
        "dual": float(max(0.0, -np.min(mu, initial=0.0))),
        "complementarity": float(np.max(np.abs(mu * slack), initial=0.0)),
    }


class ActiveSetSolver:
    """
    Primal active-set QP solver (reusable, single-threaded).

    Parameters
    ----------
    tolerance : float
        Optimality and feasibility tolerance.
    max_iterations : int
        Working-set changes before giving up with the last iterate.
    regularization : float
        Added to the Hessian diagonal when it is not numerically positive definite.
    """

    def __init__(self, tolerance: float = 1e-8, max_iterations: int = 200, regularization: float = 1e-9):
        self.tolerance = tolerance
        self.max_iterations = max_iterations
        self.regularization = regularization

    # ---------- Helpers ----------

    def _hessian(self, H: np.ndarray) -> np.ndarray:
        n = H.shape[0]
        if n == 0:
            return H
        try:
            np.linalg.cholesky(H)
            eig = np.linalg.eigvalsh(H)
            if eig[0] > 1e-10 * max(1.0, eig[-1]):
                return H
        except np.linalg.LinAlgError:
            pass
        return H + self.regularization * np.eye(n)

    def _feasible(self, P: QpProblem, x: np.ndarray, tol: float) -> bool:
        if P.n_eq and np.max(np.abs(P.A @ x - P.b)) > tol:
            return False
        if P.n_ineq and np.max(P.C @ x - P.d) > tol:
            return False
        return True

    def _phase_one(self, P: QpProblem) -> Optional[np.ndarray]:
        res = linprog(
            np.zeros(P.n),
            A_ub=P.C if P.n_ineq else None,
            b_ub=P.d if P.n_ineq else None,
            A_eq=P.A if P.n_eq else None,
            b_eq=P.b if P.n_eq else None,
            bounds=[(None, None)] * P.n,
            method="highs",
            options={"primal_feasibility_tolerance": 1e-10},
        )
        if res.status != 0:
            log.debug("phase one failed: %s", res.message)
            return None
        return np.asarray(res.x, dtype=float)

    def _start(self, P: QpProblem, warm: Optional[QpSolution]) -> Optional[np.ndarray]:
        tol = self.tolerance
        candidates = []
        if warm is not None and warm.x.shape == (P.n,):
            candidates.append(warm.x.copy())
        candidates.append(np.zeros(P.n))
        if P.n_eq:
            candidates.append(np.linalg.lstsq(P.A, P.b, rcond=None)[0])
        for x in candidates:
            if self._feasible(P, x, tol):
                return x
        return self._phase_one(P)

    @staticmethod
    def _independent(P: QpProblem, rows: Sequence[int]) -> list[int]:
        kept: list[int] = []
        base = P.A
        rank = np.linalg.matrix_rank(base) if len(base) else 0
        for i in rows:
            M = np.vstack([base, P.C[kept + [i]]])
            r = np.linalg.matrix_rank(M)
            if r > rank:
                kept.append(i)
                rank = r
        return sorted(kept)

    def _eqp(self, H, grad, A, Cw):
        n, p, w = H.shape[0], A.shape[0], Cw.shape[0]
        K = np.zeros((n + p + w, n + p + w))
        K[:n, :n] = H
        K[:n, n:n + p] = A.T
        K[:n, n + p:] = Cw.T
        K[n:n + p, :n] = A
        K[n + p:, :n] = Cw
        rhs = np.zeros(n + p + w)
        rhs[:n] = -grad
        try:
            s = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            s = np.linalg.lstsq(K, rhs, rcond=None)[0]
        return s[:n], s[n:n + p], s[n + p:]

    # ---------- Solve ----------

    def solve(self, problem: QpProblem, warm_start: Optional[QpSolution] = None) -> QpSolution:
        P = problem
        tol = self.tolerance
        H = self._hessian(P.H)
        x = self._start(P, warm_start)
        if x is None:
            fallback = np.linalg.lstsq(P.A, P.b, rcond=None)[0] if P.n_eq else np.zeros(P.n)
            return QpSolution(
                x=fallback,
                eq_multipliers=np.zeros(P.n_eq),
                ineq_multipliers=np.zeros(P.n_ineq),
                status=QpStatus.INFEASIBLE,
                iterations=0,
                message="no point satisfies the constraints",
            )

        working: list[int] = []
        if warm_start is not None and warm_start.active and P.n_ineq:
            slack = P.C @ x - P.d
            preferred = [i for i in warm_start.active if i < P.n_ineq and abs(slack[i]) <= tol]
            working = self._independent(P, preferred)

        lam = np.zeros(P.n_eq)
        mu_w = np.zeros(0)
        for it in range(1, self.max_iterations + 1):
            grad = H @ x + P.g
            Cw = P.C[working] if working else np.zeros((0, P.n))
            p, lam, mu_w = self._eqp(H, grad, P.A, Cw)

            if np.max(np.abs(p), initial=0.0) <= tol:
                if len(mu_w) == 0 or np.min(mu_w) >= -tol:
                    return self._finish(P, x, lam, working, mu_w, QpStatus.OPTIMAL, it)
                # np.argmin takes the first minimum, i.e. the lowest index
                working.pop(int(np.argmin(mu_w)))
                continue

            alpha, blocking = 1.0, None
            if P.n_ineq:
                outside = np.setdiff1d(np.arange(P.n_ineq), working)
                rate = P.C[outside] @ p
                moving = rate > 1e-14
                if np.any(moving):
                    idx = outside[moving]
                    ratios = np.maximum((P.d[idx] - P.C[idx] @ x) / rate[moving], 0.0)
                    k = int(np.argmin(ratios))
                    if ratios[k] < 1.0:
                        alpha, blocking = float(ratios[k]), int(idx[k])
            x = x + alpha * p
            if blocking is not None:
                working = sorted(working + [blocking])

        log.debug("active set hit the iteration limit (%d)", self.max_iterations)
        return self._finish(P, x, lam, working, mu_w, QpStatus.MAX_ITERATIONS, self.max_iterations)

    @staticmethod
    def _finish(P, x, lam, working, mu_w, status, iterations) -> QpSolution:
        mu = np.zeros(P.n_ineq)
        if working and len(mu_w) == len(working):
            mu[working] = mu_w
        return QpSolution(
            x=x,
            eq_multipliers=np.asarray(lam, dtype=float),
            ineq_multipliers=mu,
            status=status,
            iterations=iterations,
            active=tuple(working),
        )


def solve(problem: QpProblem, warm_start: Optional[QpSolution] = None, tolerance: float = 1e-8, max_iterations: int = 200) -> QpSolution:
    return ActiveSetSolver(tolerance, max_iterations).solve(problem, warm_start)


# ---------- Debug dump ----------
# Text format: a "# qp-problem v1" line, then for each of H g A b C d a header
# "<name> <rows> <cols>" followed by that many whitespace-separated rows.

_DUMP_ORDER = ("H", "g", "A", "b", "C", "d")


def dump_problem(problem: QpProblem, path: str | Path) -> None:
    lines = ["# qp-problem v1"]
    for name in _DUMP_ORDER:
        M = np.atleast_2d(getattr(problem, name))
        if name in ("g", "b", "d"):
            M = M.reshape(-1, 1)
        rows, cols = M.shape
        lines.append(f"{name} {rows} {cols}")
        lines.extend(" ".join(format(v, ".17g") for v in row) for row in M)
    Path(path).write_text("\n".join(lines) + "\n")


def load_problem(path: str | Path) -> QpProblem:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# qp-problem v1"):
        raise InputError(f"{path}: not a qp-problem v1 dump")
    out, i = {}, 1
    while i < len(lines):
        name, rows, cols = lines[i].split()
        rows, cols = int(rows), int(cols)
        data = [[float(v) for v in lines[i + 1 + r].split()] for r in range(rows)]
        M = np.array(data, dtype=float).reshape(rows, cols)
        out[name] = M.reshape(-1) if name in ("g", "b", "d") else M
        i += 1 + rows
    return QpProblem(**out)
