"""Transmit-position optimization by successive concave surrogates.

Each iteration linearizes the efficiency objective (with the precoder
already optimized out) around the current layout, maximizes a proximal
concave model over the box and linearized-spacing constraints, and
backtracks along the resulting ascent direction until the true objective
shows sufficient increase. Accepted iterates keep the exact
minimum-spacing constraint because the linearized constraint lower-bounds
the true distance and is preserved by convex combination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import Apv, ChannelStatistics, tx_field_matrix
from .precoder import PowerModel, PrecoderReport, optimal_precoder, total_power
from .qp import box_and_pair_constraints, solve_qp
from ._linalg import herm

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ScaKnobs:
    """Shared tuning constants of both position optimizers."""

    delta: float            # proximal curvature
    tau0: float             # initial backtracking step
    kappa: float            # backtracking shrink factor
    xi: float               # sufficient-increase control
    eps_stop: float         # increment threshold
    max_iters: int
    min_step_factor: float = 1e-8

    @classmethod
    def transmit_from_config(cls, cfg) -> "ScaKnobs":
        return cls(cfg.delta_t, cfg.tau0, cfg.kappa, cfg.xi, cfg.eps_stop,
                   cfg.sca_iters_tx)

    @classmethod
    def receive_from_config(cls, cfg) -> "ScaKnobs":
        return cls(cfg.delta_r, cfg.tau0, cfg.kappa, cfg.xi, cfg.eps_stop,
                   cfg.sca_iters_rx)


@dataclass
class ScaStepReport:
    """Per-iteration trace record of an SCA optimizer."""

    candidate: np.ndarray
    step_size: float
    objective_increment: float
    accepted: bool
    fallback_used: bool
    stalled: bool = False


def delta_matrices_transmit(stats: ChannelStatistics, wavelength: float):
    """Diagonals of the per-path phase derivatives w.r.t. x and y moves."""
    ang = stats.angles
    dx = 1j * TWO_PI / wavelength * np.sin(ang.theta_tx) * np.cos(ang.phi_tx)
    dy = 1j * TWO_PI / wavelength * np.cos(ang.theta_tx)
    return dx, dy


def ee_partial_t(g_list, params, precoder, pm: PowerModel,
                 deltas) -> np.ndarray:
    """Partial derivative of the rate-bound EE w.r.t. positions, P fixed.

    Consumed power does not depend on positions, so this is the rate-bound
    gradient scaled by 1/P_tot.
    """
    p_full = precoder.stacked
    q = p_full @ herm(p_full)
    n = g_list[0].shape[1]
    grad = np.zeros(2 * n)
    for g, par, blk, (dx, dy) in zip(g_list, params, precoder.blocks, deltas):
        pa = blk @ herm(par.a_bar)            # (N, L_t)
        qgb = q @ herm(g) @ par.b_bar         # (N, L_t)
        for offset, dvec in ((0, dx), (n, dy)):
            dg = dvec[:, None] * g
            lead = np.einsum("nl,ln->n", pa, dg, optimize=True)
            quad = np.einsum("nl,ln->n", qgb, dg, optimize=True)
            grad[offset:offset + n] += 2.0 * (lead - quad).real
    return grad / total_power(precoder, pm)


def grad_ee_transmit(t: Apv, params, stats, pm: PowerModel,
                     report: PrecoderReport, wavelength: float,
                     g_list=None, diagnostics: dict | None = None
                     ) -> np.ndarray:
    """Gradient of EE(t, P*(t)) through the optimized precoder.

    On the unconstrained branch the precoder's first-order optimality
    kills the chain-rule term and the partial derivative is the whole
    gradient. On the full-power branch the precoder and its multiplier
    move with t, adding correction terms built from the water-filling
    structure; the multiplier-sensitivity ratio has its denominator
    clamped away from zero (flagged through `diagnostics`).
    """
    if report.branch not in ("dinkelbach", "waterfilling"):
        raise ValueError(f"unknown precoder branch tag: {report.branch!r}")
    if g_list is None:
        g_list = [tx_field_matrix(t, st, wavelength) for st in stats]
    deltas = [delta_matrices_transmit(st, wavelength) for st in stats]
    grad = ee_partial_t(g_list, params, report.precoder, pm, deltas)
    if report.branch == "dinkelbach":
        return grad

    u, lam = report.eigvecs, report.eigvals
    d1 = 1.0 / (lam + report.mu)
    sinv = (u * d1) @ herm(u)
    sinv2 = (u * d1 ** 2) @ herm(u)
    s_mat = (u * lam) @ herm(u)
    n = g_list[0].shape[1]
    p_tot = total_power(report.precoder, pm)

    # derivatives of the curvature sum, shared across terminals
    cx = np.zeros((n, n), dtype=complex)
    cy = np.zeros((n, n), dtype=complex)
    for g, par, (dx, dy) in zip(g_list, params, deltas):
        gh = herm(g)
        cx += (gh * dx.conj()[None, :]) @ par.b_bar @ g
        cy += (gh * dy.conj()[None, :]) @ par.b_bar @ g

    def delta_tk(y, k):
        """Per-coordinate sensitivity tr(Y dP_k/dt) at fixed multiplier."""
        g = g_list[k]
        dx, dy = deltas[k]
        ys = y @ sinv                          # (s_k, N)
        sz = sinv @ herm(g) @ params[k].a_bar  # (N, s_k)
        szys = sz @ ys                         # (N, N)
        out = np.zeros(2 * n, dtype=complex)
        for offset, dvec, cmat in ((0, dx, cx), (n, dy, cy)):
            lead = herm(g) @ (dvec.conj()[:, None] * params[k].a_bar)
            t1 = np.einsum("ns,sn->n", lead, ys, optimize=True)
            t2 = np.einsum("nm,mn->n", cmat, szys, optimize=True)
            t3 = np.einsum("nm,mn->n", szys, herm(cmat), optimize=True)
            out[offset:offset + n] = t1 - t2 - t3
        return out

    chain = np.zeros(2 * n, dtype=complex)
    mu_num = np.zeros(2 * n)
    mu_scalar = 0.0 + 0.0j
    mu_den = 0.0
    for k, (g, par, blk) in enumerate(zip(g_list, params,
                                          report.precoder.blocks)):
        dee_dp = (herm(g) @ par.a_bar - s_mat @ blk) / p_tot  # (N, s_k)
        chain += delta_tk(herm(dee_dp), k)
        mu_num += delta_tk(herm(blk), k).real
        sz2 = sinv2 @ herm(g) @ par.a_bar
        mu_scalar += np.trace(herm(dee_dp) @ sz2)
        mu_den += np.trace(herm(blk) @ sz2).real

    natural = sum(np.linalg.norm(sinv2 @ herm(g) @ par.a_bar)
                  for g, par in zip(g_list, params))
    floor = 1e-12 * max(natural, 1.0)
    if abs(mu_den) < floor:
        mu_den = math.copysign(floor, mu_den if mu_den != 0 else 1.0)
        if diagnostics is not None:
            diagnostics["mu_denominator_clamped"] = True
    return grad + 2.0 * chain.real - 2.0 * mu_num * mu_scalar.real / mu_den


def solve_constrained_quadratic(linear_coeff: np.ndarray, curvature: float,
                                center: Apv, min_spacing: float) -> Apv:
    """Maximize g^T(v-c) - curvature*||v-c||^2 over box and spacing rows.

    With no spacing rows (single antenna) this reduces to clamping
    c + g/(2*curvature) into the box.
    """
    if curvature <= 0:
        raise ValueError("curvature must be positive")
    vec = center.as_vector()
    c_rows, d = box_and_pair_constraints(vec, center.region, min_spacing)
    h = 2.0 * curvature * np.eye(vec.size)
    res = solve_qp(h, linear_coeff, vec, c_rows, d)
    return center.with_vector(res.v)


def projected_candidate(grad: np.ndarray, center: Apv, delta: float) -> Apv:
    """Box-clamped closed form of the proximal model maximizer."""
    raw = center.as_vector() + grad / (2.0 * delta)
    return center.with_vector(np.clip(raw, 0.0, center.region))


def satisfies_linearized_spacing(candidate: Apv, center: Apv,
                                 min_spacing: float,
                                 slack: float = 1e-12) -> bool:
    """Check the linearized pairwise constraints built at `center`."""
    n = center.count
    if n < 2:
        return True
    cpos = center.positions()
    vpos = candidate.positions()
    for i in range(n):
        for j in range(i + 1, n):
            diff = cpos[i] - cpos[j]
            norm = np.linalg.norm(diff)
            if (vpos[i] - vpos[j]) @ (diff / norm) < min_spacing - slack:
                return False
    return True


def sca_transmit(t_init: Apv, params, stats, pm: PowerModel,
                 min_spacing: float, knobs: ScaKnobs, wavelength: float,
                 inner_solver=None, grad_fn=None):
    """Maximize EE(t, P*(t)) over feasible transmit layouts.

    `inner_solver(t, g_list) -> PrecoderReport` defines the inner precoder
    problem (defaults to the frozen-minorizer optimal precoder) and
    `grad_fn(t, g_list, report) -> vector` its envelope gradient. Returns
    the final layout, its precoder report, and the step trace.
    """
    if not t_init.is_feasible(min_spacing, 1e-9):
        raise ValueError("initial transmit layout violates its constraints")

    cache: dict[bytes, PrecoderReport] = {}

    def default_inner(t, g_list):
        return optimal_precoder(g_list, params, pm)

    def default_grad(t, g_list, report):
        return grad_ee_transmit(t, params, stats, pm, report, wavelength,
                                g_list=g_list)

    inner = inner_solver or default_inner
    grad_fn = grad_fn or default_grad

    def evaluate(t: Apv) -> PrecoderReport:
        key = t.as_vector().tobytes()
        if key not in cache:
            g_list = [tx_field_matrix(t, st, wavelength) for st in stats]
            cache[key] = inner(t, g_list)
        return cache[key]

    t = t_init
    trace: list[ScaStepReport] = []
    report = evaluate(t)
    for _ in range(knobs.max_iters):
        g_list = [tx_field_matrix(t, st, wavelength) for st in stats]
        grad = grad_fn(t, g_list, report)
        cand = projected_candidate(grad, t, knobs.delta)
        fallback = False
        if not satisfies_linearized_spacing(cand, t, min_spacing):
            cand = solve_constrained_quadratic(grad, knobs.delta, t,
                                               min_spacing)
            fallback = True
        direction = cand.as_vector() - t.as_vector()
        dist2 = float(direction @ direction)
        if math.sqrt(dist2) <= 1e-14 * max(1.0, t.region):
            trace.append(ScaStepReport(cand.as_vector(), 0.0, 0.0, True,
                                       fallback))
            break
        tau = knobs.tau0
        accepted = False
        increment = 0.0
        trial = t
        trial_report = report
        while tau >= knobs.min_step_factor * knobs.tau0:
            trial = t.with_vector(t.as_vector() + tau * direction)
            trial_report = evaluate(trial)
            increment = trial_report.ee - report.ee
            if increment >= knobs.xi * tau * dist2:
                accepted = True
                break
            tau *= knobs.kappa
        if not accepted:
            trace.append(ScaStepReport(cand.as_vector(), tau, 0.0, False,
                                       fallback, stalled=True))
            break
        t = trial
        report = trial_report
        trace.append(ScaStepReport(cand.as_vector(), tau, increment, True,
                                   fallback))
        if increment <= knobs.eps_stop:
            break
    return t, report, trace
