"""Dense convex QP solver.

Solves::

    minimize    0.5 x'Hx + g'x
    subject to  lower <= A x <= upper

with the dual active-set method of Goldfarb and Idnani.  The method starts
from the unconstrained minimizer and adds violated constraints one at a
time, so it needs no feasible starting point, and it can be warm-started
from the active set of a previous solve.

Multipliers follow the convention ``H x + g + A' y = 0`` with ``y_i > 0``
when the upper bound of row ``i`` is active and ``y_i < 0`` for the lower.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .errors import DimensionMismatch

REGULARIZATION = 1e-9


class QpStatus(str, Enum):
    OPTIMAL = "Optimal"
    MAX_ITERATIONS = "MaxIterations"
    INFEASIBLE = "Infeasible"


@dataclass
class QpProblem:
    H: np.ndarray
    g: np.ndarray
    A: np.ndarray = None
    lower: np.ndarray = None
    upper: np.ndarray = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.g = np.asarray(self.g, dtype=float).ravel()
        n = self.g.size
        if self.A is None:
            self.A = np.zeros((0, n))
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n) if n else np.zeros((0, 0))
        m = self.A.shape[0]
        self.lower = np.full(m, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float).ravel()
        self.upper = np.full(m, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).ravel()
        if self.H.shape != (n, n):
            raise DimensionMismatch(f"H has shape {self.H.shape}, expected ({n}, {n})")
        if self.lower.size != m or self.upper.size != m:
            raise DimensionMismatch("bound vectors must match the number of constraint rows")
        if not np.allclose(self.H, self.H.T, atol=1e-10, rtol=0):
            raise ValueError("H must be symmetric")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def n(self) -> int:
        return self.g.size

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.H @ x + self.g @ x)

    def to_json(self, path) -> None:
        """Dump for offline reproduction; infinities are written as null."""

        def enc(v):
            return [None if not np.isfinite(e) else float(e) for e in v]

        doc = {
            "H": self.H.tolist(),
            "g": self.g.tolist(),
            "A": self.A.tolist(),
            "lower": enc(self.lower),
            "upper": enc(self.upper),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)

    @classmethod
    def from_json(cls, path) -> "QpProblem":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        lo = [-np.inf if v is None else v for v in doc["lower"]]
        up = [np.inf if v is None else v for v in doc["upper"]]
        n = len(doc["g"])
        A = np.array(doc["A"], dtype=float).reshape(-1, n)
        return cls(np.array(doc["H"]), np.array(doc["g"]), A, np.array(lo), np.array(up))


@dataclass
class QpSolution:
    x: np.ndarray
    status: QpStatus
    iterations: int
    kkt_residual: float
    y: np.ndarray
    objective: float
    active: list = field(default_factory=list)
    history: list | None = None

    @property
    def ok(self) -> bool:
        return self.status is QpStatus.OPTIMAL


def kkt_residuals(p: QpProblem, x, y) -> tuple[float, float, float]:
    """Stationarity, primal infeasibility and complementarity (all infinity norms)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != p.n or y.size != p.m:
        raise DimensionMismatch("x or y has the wrong length")
    stat = p.H @ x + p.g + p.A.T @ y
    stationarity = float(np.max(np.abs(stat))) if stat.size else 0.0
    if p.m == 0:
        return stationarity, 0.0, 0.0
    Ax = p.A @ x
    viol = np.maximum(np.maximum(p.lower - Ax, Ax - p.upper), 0.0)
    primal = float(np.max(viol))
    yu = np.maximum(y, 0.0)
    yl = np.minimum(y, 0.0)
    with np.errstate(invalid="ignore"):
        cu = np.where(yu > 0, yu * np.abs(p.upper - Ax), 0.0)
        cl = np.where(yl < 0, -yl * np.abs(Ax - p.lower), 0.0)
    comp = np.maximum(cu, cl)
    comp = np.where(np.isnan(comp), np.inf, comp)
    return stationarity, primal, float(np.max(comp))


def solve_qp(p: QpProblem, tolerance: float = 1e-9, max_iter: int | None = None,
             warm_start=None, record_history: bool = False) -> QpSolution:
    """Solve ``p`` to optimality; ``warm_start`` is a previous solution or its active list."""
    n, m = p.n, p.m
    max_iter = max_iter if max_iter is not None else 10 * (n + 2 * m) + 50

    H = p.H
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        L = None
    if L is None or np.min(np.abs(np.diag(L))) ** 2 < 1e-10:
        L = np.linalg.cholesky(H + REGULARIZATION * np.eye(n))
    Linv = solve_triangular(L, np.eye(n), lower=True)
    J = Linv.T  # H^-1 = J J'

    # one-sided constraints  c_j' x >= b_j
    lo_f = np.isfinite(p.lower)
    up_f = np.isfinite(p.upper)
    eq = lo_f & up_f & (p.lower == p.upper)
    lo_idx = np.flatnonzero(lo_f & ~eq)
    up_idx = np.flatnonzero(up_f & ~eq)
    eq_idx = np.flatnonzero(eq)
    C = np.vstack([p.A[lo_idx], -p.A[up_idx], p.A[eq_idx]]) if m else np.zeros((0, n))
    b = np.concatenate([p.lower[lo_idx], -p.upper[up_idx], p.lower[eq_idx]]) if m else np.zeros(0)
    row = np.concatenate([lo_idx, up_idx, eq_idx]).astype(int)
    side = np.concatenate([-np.ones(lo_idx.size), np.ones(up_idx.size), np.zeros(eq_idx.size)])
    n_ineq = lo_idx.size + up_idx.size
    is_eq = np.zeros(C.shape[0], dtype=bool)
    is_eq[n_ineq:] = True
    cnorm = np.linalg.norm(C, axis=1) if C.size else np.zeros(0)
    cnorm[cnorm == 0] = 1.0
    W = J.T @ C.T  # column j is J' c_j

    x0 = -(J @ (J.T @ p.g))
    x = x0.copy()
    active: list[int] = []
    u = np.zeros(0)
    history = [p.objective(x)] if record_history else None
    iterations = 0
    status = QpStatus.OPTIMAL

    def directions(j, act):
        w = W[:, j]
        if not act:
            return J @ w, np.zeros(0)
        V = W[:, act]
        S = V.T @ V
        r = np.linalg.solve(S, V.T @ w)
        return J @ (w - V @ r), r

    def eqp(act):
        """Solution and multipliers with every constraint in ``act`` held at equality."""
        V = W[:, act]
        S = V.T @ V
        lam = cho_solve(cho_factor(S), b[act] - C[act] @ x0)
        return x0 + J @ (V @ lam), lam

    # warm start: take the previous active set, drop constraints with negative multipliers
    if warm_start is not None:
        prev = warm_start.active if isinstance(warm_start, QpSolution) else warm_start
        key = {(int(r), s): j for j, (r, s) in enumerate(zip(row, side))}
        act = [key[k] for k in (tuple(a) for a in prev) if k in key]
        act = list(dict.fromkeys(act))
        while act:
            try:
                xw, lam = eqp(act)
            except (np.linalg.LinAlgError, ValueError):
                act = []
                break
            neg = [i for i, j in enumerate(act) if not is_eq[j] and lam[i] < -1e-12]
            if not neg:
                x, u, active = xw, lam, act
                break
            worst = min(neg, key=lambda i: lam[i])
            act.pop(worst)

    # equality rows are oriented toward the current residual when added and never dropped
    orient = np.ones(C.shape[0])
    pending_eq = [int(j) for j in np.flatnonzero(is_eq) if j not in active]

    while True:
        if iterations >= max_iter:
            status = QpStatus.MAX_ITERATIONS
            break
        if pending_eq:
            j = pending_eq[0]
            if C[j] @ x - b[j] > 0:
                C[j], b[j], W[:, j] = -C[j], -b[j], -W[:, j]
                orient[j] = -orient[j]
        else:
            if C.shape[0] == 0:
                break
            slack = (C @ x - b) / cnorm
            slack[active] = np.inf
            slack[is_eq] = np.inf
            j = int(np.argmin(slack))
            scale = max(1.0, abs(b[j]) / cnorm[j])
            if slack[j] >= -tolerance * scale:
                break
        iterations += 1
        u_plus = np.append(u, 0.0)
        while True:
            z, r = directions(j, active)
            s_j = C[j] @ x - b[j]
            t1 = np.inf
            k_drop = -1
            for i, jj in enumerate(active):
                if r[i] > 1e-14 and not is_eq[jj]:
                    ratio = u_plus[i] / r[i]
                    if ratio < t1:
                        t1, k_drop = ratio, i
            zc = float(C[j] @ z)
            t2 = -s_j / zc if zc > 1e-11 * float(W[:, j] @ W[:, j]) else np.inf
            if not np.isfinite(min(t1, t2)):
                status = QpStatus.INFEASIBLE
                u = u_plus[:-1]
                break
            if t2 <= t1:
                x = x + t2 * z
                u_plus[:-1] -= t2 * r
                u_plus[-1] += t2
                active.append(j)
                u = u_plus
                if pending_eq:
                    pending_eq.pop(0)
                if record_history:
                    history.append(p.objective(x))
                break
            # partial step (or a pure dual step when z vanishes), then drop a blocking constraint
            if np.isfinite(t2):
                x = x + t1 * z
            u_plus[:-1] -= t1 * r
            u_plus[-1] += t1
            active.pop(k_drop)
            u_plus = np.delete(u_plus, k_drop)
            iterations += 1
            if record_history:
                history.append(p.objective(x))
            if iterations >= max_iter:
                status = QpStatus.MAX_ITERATIONS
                u = u_plus[:-1]
                break
        if status is not QpStatus.OPTIMAL:
            break

    if status is QpStatus.OPTIMAL and C.shape[0]:
        # guards against near-dependent constraints accepted with exploding multipliers
        resid = np.max(b - C @ x) / max(1.0, float(np.max(np.abs(b))))
        if resid > 1e-6:
            status = QpStatus.INFEASIBLE

    y = np.zeros(m)
    for lam, j in zip(u, active):
        # H x + g = sum c_j lam_j, and c_j is +a (lower/eq) or -a (upper)
        if is_eq[j]:
            y[row[j]] -= orient[j] * lam
        else:
            y[row[j]] += -lam if side[j] < 0 else lam
    kkt = max(kkt_residuals(p, x, y))
    return QpSolution(
        x=x,
        status=status,
        iterations=iterations,
        kkt_residual=kkt,
        y=y,
        objective=p.objective(x),
        active=[(int(row[j]), float(side[j])) for j in active],
        history=history,
    )
