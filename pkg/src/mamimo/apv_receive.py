"""Receive-position optimization for a single terminal.

With the transmit variables frozen, each terminal's average-rate
approximation depends on its own positions only through the receive
field-response matrix, sandwiched between two fixed effective-gain
matrices. The optimizer linearizes that sandwich, keeps the exact
concavity of log-det in the sandwiched matrix, and adds a proximal term;
the resulting strongly concave quadratic has a closed-form maximizer (a
small positive-definite solve) with a constrained-QP fallback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import Apv, ChannelStatistics, rx_field_matrix, tx_field_matrix
from .de import de_fixed_point, gamma_receive
from .qp import box_and_pair_constraints, solve_qp
from .apv_transmit import ScaKnobs, ScaStepReport, satisfies_linearized_spacing
from ._linalg import herm, hermitize, logdet

TWO_PI = 2.0 * math.pi


@dataclass
class ReceiveObjective:
    """Frozen per-terminal receive-view rate function r -> nats.

    Holds the effective-gain matrices and the position-independent
    constants of both branches, valid for one (t, P) pair.
    """

    gamma_plus: np.ndarray     # (L_r, L_r)
    gamma_minus: np.ndarray
    const_plus: float
    const_minus: float
    stats: ChannelStatistics
    noise_power: float
    wavelength: float

    def evaluate(self, r: Apv) -> float:
        f = rx_field_matrix(r, self.stats, self.wavelength)
        m = f.shape[1]
        eye = np.eye(m)
        pos = logdet(eye + herm(f) @ self.gamma_plus @ f) + self.const_plus
        neg = logdet(eye + herm(f) @ self.gamma_minus @ f) + self.const_minus
        return float(pos - neg)


def build_receive_objective(t: Apv, precoder, r: Apv,
                            stats: ChannelStatistics, noise_power: float,
                            wavelength: float, ut_index: int,
                            max_iters: int = 100,
                            tol: float = 1e-9) -> ReceiveObjective:
    """Freeze the receive-view rate function at the current (t, P, r)."""
    g = tx_field_matrix(t, stats, wavelength)
    f = rx_field_matrix(r, stats, wavelength)
    p_full = precoder.stacked
    q = p_full @ herm(p_full)
    p_minus = precoder.excluding(ut_index)
    q_minus = p_minus @ herm(p_minus)
    state_pos = de_fixed_point(g, f, q, stats, noise_power, max_iters, tol)
    state_neg = de_fixed_point(g, f, q_minus, stats, noise_power, max_iters,
                               tol)
    n = g.shape[1]
    eye_n = np.eye(n)
    consts = []
    for state in (state_pos, state_neg):
        consts.append(logdet(state.phi) - noise_power * np.trace(
            (eye_n - state.phi) @ state.theta).real)
    return ReceiveObjective(
        gamma_receive(state_pos, g, q, stats, noise_power),
        gamma_receive(state_neg, g, q_minus, stats, noise_power),
        float(consts[0]), float(consts[1]), stats, noise_power, wavelength)


@dataclass
class ReceiveSurrogateCtx:
    """Expansion-point data of the receive surrogate at one iterate."""

    r0: Apv
    e_plus: np.ndarray        # (M, M) Hermitian
    e_minus: np.ndarray
    dxr: np.ndarray           # (L_r,) diagonal phase derivatives
    dyr: np.ndarray
    dXr: np.ndarray           # (M, M) sandwiched derivative, x moves
    dYr: np.ndarray
    j0: np.ndarray            # (M, M) sandwich at the expansion point
    rate_plus0: float
    rate_minus0: float
    grad_minus: np.ndarray    # (2M,)
    objective: ReceiveObjective


def build_receive_ctx(r: Apv, objective: ReceiveObjective
                      ) -> ReceiveSurrogateCtx:
    """Evaluate every expansion-point matrix fresh at r."""
    st = objective.stats
    wl = objective.wavelength
    f = rx_field_matrix(r, st, wl)
    m = f.shape[1]
    eye = np.eye(m)
    j0 = hermitize(herm(f) @ objective.gamma_plus @ f)
    j0_minus = hermitize(herm(f) @ objective.gamma_minus @ f)
    e_plus = hermitize(np.linalg.inv(eye + j0))
    e_minus = hermitize(np.linalg.inv(eye + j0_minus))
    dxr = 1j * TWO_PI / wl * np.sin(st.angles.theta_rx) * np.cos(
        st.angles.phi_rx)
    dyr = 1j * TWO_PI / wl * np.cos(st.angles.theta_rx)
    fh = herm(f)
    dXr = fh @ objective.gamma_plus @ (dxr[:, None] * f)
    dYr = fh @ objective.gamma_plus @ (dyr[:, None] * f)
    rate_plus0 = logdet(eye + j0) + objective.const_plus
    rate_minus0 = logdet(eye + j0_minus) + objective.const_minus
    gm_x = np.einsum("mi,in->mn", e_minus @ fh @ objective.gamma_minus,
                     dxr[:, None] * f, optimize=True)
    gm_y = np.einsum("mi,in->mn", e_minus @ fh @ objective.gamma_minus,
                     dyr[:, None] * f, optimize=True)
    grad_minus = 2.0 * np.concatenate([np.diag(gm_x), np.diag(gm_y)]).real
    return ReceiveSurrogateCtx(r, e_plus, e_minus, dxr, dyr, dXr, dYr, j0,
                               float(rate_plus0), float(rate_minus0),
                               grad_minus, objective)


def _linearized_sandwich(ctx: ReceiveSurrogateCtx, r: Apv) -> np.ndarray:
    ux = r.x - ctx.r0.x
    uy = r.y - ctx.r0.y
    return (ctx.j0
            + ctx.dXr * ux[None, :] + ux[:, None] * herm(ctx.dXr)
            + ctx.dYr * uy[None, :] + uy[:, None] * herm(ctx.dYr))


def receive_surrogate_value(r: Apv, ctx: ReceiveSurrogateCtx,
                            delta_r: float) -> float:
    """Proximal concave surrogate of the receive-view rate at r.

    Quadratic model of the positive branch around the linearized sandwich,
    minus the first-order expansion of the negative branch, minus the
    proximal penalty. Tangent to the frozen objective at the expansion
    point by construction.
    """
    dj = _linearized_sandwich(ctx, r) - ctx.j0
    ed = ctx.e_plus @ dj
    pos = (ctx.rate_plus0 + np.trace(ed).real - np.trace(ed @ ed).real)
    u = r.as_vector() - ctx.r0.as_vector()
    neg = ctx.rate_minus0 + ctx.grad_minus @ u
    return float(pos - neg - delta_r * (u @ u))


def surrogate_system(ctx: ReceiveSurrogateCtx, delta_r: float):
    """(A, b) of the surrogate's stationarity system A u = b.

    A is symmetric and at least 2*delta_r positive definite: it stacks the
    Hadamard-product curvature of the quadratic model on top of the
    proximal term.
    """
    ex = ctx.e_plus @ ctx.dXr
    ey = ctx.e_plus @ ctx.dYr
    hx = herm(ctx.dXr) @ ctx.e_plus @ ctx.dXr
    hy = herm(ctx.dYr) @ ctx.e_plus @ ctx.dYr
    hxy = herm(ctx.dXr) @ ctx.e_plus @ ctx.dYr
    hyx = herm(ctx.dYr) @ ctx.e_plus @ ctx.dXr
    top = np.hstack([ex * ex.T, ey * ex.T])
    bot = np.hstack([ex * ey.T, ey * ey.T])
    block1 = np.vstack([top, bot])
    top = np.hstack([ctx.e_plus * hx.T, ctx.e_plus * hyx.T])
    bot = np.hstack([ctx.e_plus * hxy.T, ctx.e_plus * hy.T])
    block2 = np.vstack([top, bot])
    m = ctx.r0.count
    a = 4.0 * (block1 + block2).real + 2.0 * delta_r * np.eye(2 * m)
    a = 0.5 * (a + a.T)
    b = 2.0 * np.concatenate([np.diag(ctx.e_plus @ ctx.dXr),
                              np.diag(ctx.e_plus @ ctx.dYr)]).real
    b = b - ctx.grad_minus
    return a, b


def receive_newton_candidate(ctx: ReceiveSurrogateCtx,
                             delta_r: float) -> Apv:
    """Unconstrained maximizer of the surrogate: r0 + A^{-1} b."""
    a, b = surrogate_system(ctx, delta_r)
    try:
        step = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(
            "surrogate system singular despite the proximal term") from exc
    return ctx.r0.with_vector(ctx.r0.as_vector() + step)


def sca_receive(r_init: Apv, objective: ReceiveObjective, min_spacing: float,
                knobs: ScaKnobs):
    """Maximize the frozen receive-view rate over feasible layouts.

    The closed-form candidate is used whenever it respects the box and the
    linearized spacing rows, otherwise the same quadratic goes through the
    constrained QP. Backtracking tests the true (frozen) objective.
    """
    if not r_init.is_feasible(min_spacing, 1e-9):
        raise ValueError("initial receive layout violates its constraints")
    r = r_init
    value = objective.evaluate(r)
    trace: list[ScaStepReport] = []
    for _ in range(knobs.max_iters):
        ctx = build_receive_ctx(r, objective)
        cand = receive_newton_candidate(ctx, knobs.delta)
        fallback = False
        if not (cand.in_box()
                and satisfies_linearized_spacing(cand, r, min_spacing)):
            a, b = surrogate_system(ctx, knobs.delta)
            vec = r.as_vector()
            c_rows, d = box_and_pair_constraints(vec, r.region, min_spacing)
            cand = r.with_vector(solve_qp(a, b, vec, c_rows, d).v)
            fallback = True
        direction = cand.as_vector() - r.as_vector()
        dist2 = float(direction @ direction)
        if math.sqrt(dist2) <= 1e-14 * max(1.0, r.region):
            trace.append(ScaStepReport(cand.as_vector(), 0.0, 0.0, True,
                                       fallback))
            break
        tau = knobs.tau0
        accepted = False
        increment = 0.0
        trial, trial_value = r, value
        while tau >= knobs.min_step_factor * knobs.tau0:
            trial = r.with_vector(r.as_vector() + tau * direction)
            trial_value = objective.evaluate(trial)
            increment = trial_value - value
            if increment >= knobs.xi * tau * dist2:
                accepted = True
                break
            tau *= knobs.kappa
        if not accepted:
            trace.append(ScaStepReport(cand.as_vector(), tau, 0.0, False,
                                       fallback, stalled=True))
            break
        r, value = trial, trial_value
        trace.append(ScaStepReport(cand.as_vector(), tau, increment, True,
                                   fallback))
        if increment <= knobs.eps_stop:
            break
    return r, trace
