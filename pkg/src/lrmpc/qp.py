"""Dense primal active-set solver for small strictly convex QPs.

    minimize    0.5 x'Hx + g'x
    subject to  A x >= b

The caller supplies a feasible starting point. Equality-constrained
subproblems are solved in range space with a precomputed inverse Hessian,
which is cheap at MPC sizes (a few dozen variables).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class QPError(RuntimeError):
    pass


@dataclass
class QPResult:
    x: np.ndarray
    active: list[int]
    multipliers: np.ndarray
    iterations: int


def solve_qp(H, g, A, b, x0, working=(), tol=1e-10, max_iter=500, Hinv=None) -> QPResult:
    H = np.asarray(H, dtype=float)
    A = np.asarray(A, dtype=float).reshape(-1, len(g))
    b = np.asarray(b, dtype=float)
    x = np.array(x0, dtype=float)
    if Hinv is None:
        try:
            Hinv = np.linalg.inv(H)
        except np.linalg.LinAlgError as exc:
            raise QPError(f"singular Hessian: {exc}") from None
    scale = max(1.0, float(np.abs(b).max(initial=0.0)))
    slack = A @ x - b
    if np.any(slack < -1e-7 * scale):
        raise QPError(f"starting point infeasible by {-slack.min():.3e}")
    W = [i for i in working if abs(slack[i]) <= 1e-9 * scale]
    lam = np.zeros(0)
    for it in range(1, max_iter + 1):
        grad = H @ x + g
        Hg = Hinv @ grad
        if W:
            Aw = A[W]
            AH = Aw @ Hinv
            M = AH @ Aw.T
            rhs = Aw @ Hg
            try:
                lam = np.linalg.solve(M, rhs)
            except np.linalg.LinAlgError:
                lam = np.linalg.lstsq(M, rhs, rcond=None)[0]
            p = -Hg + AH.T @ lam
        else:
            lam = np.zeros(0)
            p = -Hg
        if np.linalg.norm(p) <= tol * max(1.0, np.linalg.norm(x)):
            if len(W) == 0 or lam.min() >= -tol * max(1.0, np.abs(lam).max()):
                return QPResult(x, W, lam, it)
            W.pop(int(np.argmin(lam)))
            continue
        Ap = A @ p
        alpha, block = 1.0, -1
        inw = np.zeros(len(b), dtype=bool)
        inw[W] = True
        cand = np.where((~inw) & (Ap < -1e-14))[0]
        if len(cand):
            ratios = np.maximum((b[cand] - A[cand] @ x) / Ap[cand], 0.0)
            k = int(np.argmin(ratios))
            if ratios[k] < 1.0:
                alpha, block = float(ratios[k]), int(cand[k])
        x = x + alpha * p
        if block >= 0:
            W.append(block)
    raise QPError(f"active-set iteration limit ({max_iter}) reached")
