"""Dense strictly-concave QP with box and pairwise-halfspace constraints.

The position optimizers need tiny QPs (tens of variables) solved to
machine precision, deterministically, many times per run. A primal
active-set method fits: it terminates finitely on strictly concave
problems and its KKT residual is limited only by the linear solves.

Problems are phrased as  maximize  b^T u - 0.5 u^T H u  over steps
u = v - center, subject to C (center + u) >= d, with H positive definite
and a feasible center.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class QPError(RuntimeError):
    pass


@dataclass
class QPResult:
    v: np.ndarray            # optimizer, in position coordinates
    active: list[int]        # final working set
    duals: np.ndarray        # multipliers of the working set (>= 0 at KKT)
    iterations: int
    kkt_residual: float


def box_and_pair_constraints(center: np.ndarray, region: float,
                             min_gap: float):
    """Constraint rows C v >= d for a stacked (x; y) position vector.

    Box rows keep every coordinate inside [0, region]; pair rows keep the
    projection of each position difference onto its current direction at
    least ``min_gap``, which linearizes (and lower-bounds) the true
    pairwise distance.
    """
    dim = center.size
    n = dim // 2
    rows = []
    rhs = []
    eye = np.eye(dim)
    for i in range(dim):
        rows.append(eye[i])
        rhs.append(0.0)
        rows.append(-eye[i])
        rhs.append(-region)
    for i in range(n):
        for j in range(i + 1, n):
            diff = np.array([center[i] - center[j],
                             center[n + i] - center[n + j]])
            norm = np.linalg.norm(diff)
            if norm <= 0:
                raise QPError(
                    f"antennas {i} and {j} coincide; cannot linearize the "
                    "spacing constraint")
            u = diff / norm
            row = np.zeros(dim)
            row[i], row[j] = u[0], -u[0]
            row[n + i], row[n + j] = u[1], -u[1]
            rows.append(row)
            rhs.append(min_gap)
    return np.array(rows), np.array(rhs)


def solve_qp(h: np.ndarray, b: np.ndarray, center: np.ndarray,
             c_rows: np.ndarray, d: np.ndarray,
             max_iters: int | None = None) -> QPResult:
    """Working-set solve of max b^T u - 0.5 u^T H u, C(center+u) >= d.

    Classic homogeneous-step formulation: the working set only ever holds
    linearly independent rows (a blocking row is never in the span of the
    current set, since the step is orthogonal to that span but strictly
    decreases the blocking slack). Selection rules are deterministic and
    switch to smallest-index (Bland-style) if degenerate cycling drags on.
    """
    dim = center.size
    h = 0.5 * (h + h.T)
    rhs = d - c_rows @ center        # constraints in step form: C u >= rhs
    if rhs.max() > 1e-9 * max(1.0, np.abs(d).max()):
        raise QPError("infeasible center handed to the QP solver")
    h_inv = np.linalg.inv(h)
    n_rows = len(d)
    if max_iters is None:
        max_iters = 50 * (dim + n_rows)
    bland_after = 4 * (dim + n_rows)

    u = np.zeros(dim)
    work: list[int] = []
    duals = np.zeros(0)
    step_scale = max(1.0, float(np.linalg.norm(h_inv @ b)))
    at_subspace_opt = False
    for it in range(1, max_iters + 1):
        grad = h @ u - b             # gradient of the minimization form
        if work:
            c_w = c_rows[work]
            gram = c_w @ h_inv @ c_w.T
            nu = np.linalg.solve(gram, c_w @ (h_inv @ grad))
            step = h_inv @ (c_w.T @ nu - grad)
        else:
            nu = np.zeros(0)
            step = -h_inv @ grad
        # a full unblocked step lands exactly on the subspace optimum, so
        # the follow-up step is round-off and means "check the duals"
        if at_subspace_opt or np.linalg.norm(step) <= 1e-13 * step_scale:
            at_subspace_opt = False
            if nu.size == 0 or nu.min() >= -1e-11 * max(1.0, np.abs(nu).max()):
                duals = nu
                break
            negatives = np.nonzero(nu < 0)[0]
            if it > bland_after:
                pick = int(negatives[np.argmin([work[i] for i in negatives])])
            else:
                pick = int(np.argmin(nu))
            work.pop(pick)
            continue
        alpha = 1.0
        blocking = -1
        cu = c_rows @ u
        cs = c_rows @ step
        tie = 1e-12
        for row in range(n_rows):
            if row in work or cs[row] >= -1e-14:
                continue
            limit = max((rhs[row] - cu[row]) / cs[row], 0.0)
            if limit < alpha - tie:
                alpha = limit
                blocking = row
            elif blocking >= 0 and limit <= alpha + tie and row < blocking:
                blocking = row
        u = u + alpha * step
        if blocking >= 0:
            work.append(blocking)
        else:
            at_subspace_opt = True
    else:
        raise QPError("active-set iteration limit exceeded")

    v = center + u
    return QPResult(v, list(work), np.asarray(duals), it,
                    kkt_residual(h, b, center, c_rows, d, v, work, duals))


def kkt_residual(h, b, center, c_rows, d, v, active, lam) -> float:
    """Scaled max of stationarity, feasibility, and complementarity errors.

    Multipliers follow the minimization convention (nonnegative at the
    optimum): grad of 0.5 u^T H u - b^T u equals C_active^T lam.
    """
    u = v - center
    lam = np.asarray(lam)
    grad = h @ u - b
    if active and lam.size:
        stat = grad - c_rows[active].T @ lam
    else:
        stat = grad
    scale = max(1.0, float(np.linalg.norm(b)))
    out = float(np.linalg.norm(stat)) / scale
    if len(d):
        slack = c_rows @ v - d
        out = max(out, float(-slack.min()))
        if active and lam.size:
            out = max(out, float(-lam.min()) / scale,
                      float(np.max(np.abs(lam * slack[active]))) / scale)
    return out
