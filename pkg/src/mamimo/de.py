"""Deterministic-equivalent rate engine.

The expected log-det rate of a Rician channel with a diagonal-free NLOS
variance profile admits a closed-form approximation driven by four coupled
resolvent matrices. This module solves that fixed point, evaluates the
rate functional from both the transmit and the receive viewpoint, and
builds the quadratic minorizer coefficients that the precoder and
position optimizers consume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import Apv, ChannelStatistics, rx_field_matrix, tx_field_matrix
from ._linalg import herm, herm_sqrt, hermitize, logdet


class DENonConvergence(RuntimeError):
    """Fixed point failed to reach the requested residual."""


@dataclass
class DEState:
    """Converged (or best-effort) resolvent matrices for one covariance."""

    phi_tilde: np.ndarray    # (M, M)
    phi: np.ndarray          # (N, N)
    theta_tilde: np.ndarray  # (M, M)
    theta: np.ndarray        # (N, N)
    residual: float
    iterations: int
    converged: bool
    phi_inv: np.ndarray      # cached inverse of phi
    history: tuple = ()      # residual per sweep, for diagnostics


def eta_tilde(theta: np.ndarray, g_qhalf: np.ndarray,
              mask: np.ndarray) -> np.ndarray:
    """Receive-side NLOS quadratic average, a diagonal (L_r, L_r) matrix."""
    return np.diag(_eta_tilde_vec(theta, g_qhalf, mask))


def eta(theta_tilde: np.ndarray, f: np.ndarray,
        mask: np.ndarray) -> np.ndarray:
    """Transmit-side NLOS quadratic average, a diagonal (L_t, L_t) matrix."""
    return np.diag(_eta_vec(theta_tilde, f, mask))


def _eta_tilde_vec(theta, g_qhalf, mask):
    # E{ S X S^H } for S = mask .* W collapses to a diagonal whose entries
    # mix the diagonal of X = Gq Theta Gq^H through the squared mask rows.
    v = np.einsum("ij,jk,ik->i", g_qhalf, theta, g_qhalf.conj(),
                  optimize=True)
    return (mask ** 2) @ v


def _eta_vec(theta_tilde, f, mask):
    u = np.einsum("ij,jk,ik->i", f, theta_tilde, f.conj(), optimize=True)
    return (mask ** 2).T @ u


def _phi_inverse(phi, g_qhalf, eta_diag):
    """Inverse of phi, using the low-rank shortcut when it is well posed.

    The shortcut inverts an (L_t, L_t) system instead of (N, N); it needs
    every diagonal entry of the NLOS average to be safely nonzero, which
    the usual diagonal-mask statistics violate (their first path column is
    all zeros), so the dense path remains the workhorse.
    """
    l_t, n = g_qhalf.shape
    mags = np.abs(eta_diag)
    if l_t <= n and mags.size and mags.min() > 1e-9 * max(1.0, mags.max()):
        core = np.diag(1.0 / eta_diag) - g_qhalf @ herm(g_qhalf)
        inner = np.linalg.solve(core, g_qhalf)
        return np.eye(n, dtype=complex) + herm(g_qhalf) @ inner
    return np.linalg.inv(phi)


def de_fixed_point(g: np.ndarray, f: np.ndarray, q: np.ndarray,
                   stats: ChannelStatistics, noise_power: float,
                   max_iters: int = 100, tol: float = 1e-9,
                   memory: int = 8) -> DEState:
    """Solve the coupled resolvent equations for covariance q = P P^H.

    The four matrices are determined by the two real diagonal NLOS
    averages, so the sweep is contracted to that small vector and
    accelerated with safeguarded Anderson mixing (an extrapolated step is
    kept only if it shrinks the residual, otherwise the plain sweep is
    taken). ``memory=0`` reproduces plain sweeps; a zero ``tol`` runs
    exactly ``max_iters`` sweeps. Plain sweeps alone contract too slowly
    at high SNR to ever reach tight tolerances.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    l_t, n = g.shape
    l_r, m = f.shape
    s2 = noise_power
    if s2 <= 0:
        raise ValueError("noise power must be strictly positive")
    mask = stats.nlos_mask
    qhalf = herm_sqrt(q)
    gq = g @ qhalf                                   # (L_t, N)
    hq = herm(f) @ stats.los_response @ gq           # (M, N)
    eye_m = np.eye(m, dtype=complex)
    eye_n = np.eye(n, dtype=complex)

    def materialize(z):
        """Rebuild the four matrices from the diagonal state."""
        et, ev = z[:l_r], z[l_r:]
        phi_t = eye_m - herm(f) @ (et[:, None] * f)
        phi = eye_n - herm(gq) @ (ev[:, None] * gq)
        phi_inv = _phi_inverse(phi, gq, ev)
        theta_t = _update_theta_tilde(phi_t, phi_inv, hq, s2)
        theta = _update_theta(phi_inv, theta_t, hq, s2)
        return phi_t, phi, phi_inv, theta_t, theta

    def sweep(z):
        _, _, _, theta_t, theta = materialize(z)
        return np.concatenate([_eta_tilde_vec(theta, gq, mask).real,
                               _eta_vec(theta_t, f, mask).real])

    def res_norm(z):
        fz = sweep(z)
        return float(np.linalg.norm(fz - z)
                     / max(np.linalg.norm(fz), 1e-300)), fz

    # z = 0 is the pure-LOS solution, matching the identity-matrix start.
    z = np.zeros(l_r + l_t)
    zs: list[np.ndarray] = []
    fs: list[np.ndarray] = []
    history: list[float] = []
    residual = math.inf
    iterations = 0
    for iterations in range(1, max_iters + 1):
        residual, fz = res_norm(z)
        history.append(residual)
        if tol > 0 and residual <= tol:
            break
        zs.append(z)
        fs.append(fz)
        if len(zs) > memory + 1:
            zs.pop(0)
            fs.pop(0)
        if len(zs) >= 2:
            r_mat = np.stack([fi - zi for zi, fi in zip(zs, fs)], axis=1)
            d_res = r_mat[:, 1:] - r_mat[:, :-1]
            d_f = np.stack([fs[i + 1] - fs[i] for i in range(len(fs) - 1)],
                           axis=1)
            coef, *_ = np.linalg.lstsq(d_res, r_mat[:, -1], rcond=None)
            z_acc = fz - d_f @ coef
            acc_res, _ = res_norm(z_acc)
            if np.isfinite(acc_res) and acc_res < residual:
                z = z_acc
                continue
        z = fz

    phi_t, phi, phi_inv, theta_t, theta = materialize(z)
    return DEState(phi_t, phi, theta_t, theta, residual, iterations,
                   tol <= 0 or residual <= tol, phi_inv, tuple(history))


def _update_theta_tilde(phi_t, phi_inv, hq, s2):
    core = s2 * phi_t + hq @ phi_inv @ herm(hq)
    try:
        return hermitize(-np.linalg.inv(core))
    except np.linalg.LinAlgError as exc:
        raise DENonConvergence(
            "singular resolvent core; check noise power and inputs") from exc


def _update_theta(phi_inv, theta_t, hq, s2):
    x = herm(hq) @ theta_t @ hq
    return hermitize(-(phi_inv + phi_inv @ x @ phi_inv) / s2)


def gamma_tilde(state: DEState, f: np.ndarray, stats: ChannelStatistics,
                noise_power: float) -> np.ndarray:
    """Transmit-side effective-gain matrix of the rate functional."""
    a = herm(stats.los_response) @ f      # (L_t, M)
    los_part = a @ np.linalg.solve(state.phi_tilde, herm(a)) / noise_power
    return hermitize(los_part) - eta(state.theta_tilde, f, stats.nlos_mask)


def rate_transmit_term(state: DEState, g: np.ndarray, f: np.ndarray,
                       q: np.ndarray, stats: ChannelStatistics,
                       noise_power: float) -> float:
    """One branch (given covariance) of the transmit-view rate, in nats."""
    l_t = g.shape[0]
    m = f.shape[1]
    gt = gamma_tilde(state, f, stats, noise_power)
    gqg = g @ q @ herm(g)
    val = logdet(np.eye(l_t) + gt @ gqg)
    val += logdet(state.phi_tilde)
    val -= noise_power * np.trace(
        (np.eye(m) - state.phi_tilde) @ state.theta_tilde).real
    return float(val)


def gamma_receive(state: DEState, g: np.ndarray, q: np.ndarray,
                  stats: ChannelStatistics, noise_power: float) -> np.ndarray:
    """Receive-side effective-gain matrix, mirror of `gamma_tilde`.

    Built with the inverse of phi, which makes the receive view agree with
    the transmit view to fixed-point accuracy (checked by tests).
    """
    qhalf = herm_sqrt(q)
    b = stats.los_response @ g @ qhalf    # (L_r, N)
    los_part = b @ state.phi_inv @ herm(b) / noise_power
    return hermitize(los_part) - eta_tilde(state.theta, g @ qhalf,
                                           stats.nlos_mask)


def rate_receive_term(state: DEState, f: np.ndarray, gamma: np.ndarray,
                      noise_power: float) -> float:
    """One branch of the receive-view rate, in nats."""
    m = f.shape[1]
    n = state.phi.shape[0]
    val = logdet(np.eye(m) + herm(f) @ gamma @ f)
    val += logdet(state.phi)
    val -= noise_power * np.trace(
        (np.eye(n) - state.phi) @ state.theta).real
    return float(val)


def de_rate_transmit(t: Apv, precoder, r: Apv, stats: ChannelStatistics,
                     noise_power: float, wavelength: float,
                     which: str = "net", max_iters: int = 20,
                     tol: float = 1e-9, ut_index: int | None = None) -> float:
    """Average-rate approximation for one terminal, transmit view.

    `which` selects the positive branch (full covariance), the negative
    branch (interference-only covariance), or their difference. The
    terminal index is needed only to exclude its own blocks from the
    interference covariance; by default the last block is excluded.
    """
    g = tx_field_matrix(t, stats, wavelength)
    f = rx_field_matrix(r, stats, wavelength)
    k = ut_index if ut_index is not None else len(precoder.blocks) - 1
    p_full = precoder.stacked
    out = 0.0
    if which in ("positive", "net"):
        q = p_full @ herm(p_full)
        st = de_fixed_point(g, f, q, stats, noise_power, max_iters, tol)
        out += rate_transmit_term(st, g, f, q, stats, noise_power)
    if which in ("negative", "net"):
        p_minus = precoder.excluding(k)
        q_minus = p_minus @ herm(p_minus)
        st = de_fixed_point(g, f, q_minus, stats, noise_power, max_iters, tol)
        neg = rate_transmit_term(st, g, f, q_minus, stats, noise_power)
        out = out - neg if which == "net" else neg
    if which == "net" and -1e-6 < out < 0.0:
        out = 0.0
    return float(out)


@dataclass
class MinorizerParams:
    """Quadratic lower-bound coefficients for one terminal's rate."""

    a_bar: np.ndarray   # (L_t, s_k)
    b_bar: np.ndarray   # (L_t, L_t), Hermitian PSD after clipping
    c_bar: float
    rate_at_expansion: float


def minorizer_params(t: Apv, rs: list[Apv], precoder,
                     stats: list[ChannelStatistics], noise_power: float,
                     wavelength: float, max_iters: int = 20,
                     tol: float = 1e-9) -> list[MinorizerParams]:
    """Build the per-terminal minorizer at the expansion point (t, rs, P).

    The curvature matrix is the gap between the interference-only and the
    full-signal effective gains; it is PSD in exact arithmetic and gets
    eigenvalue-clipped here so the precoder solvers can rely on it. The
    constant is chosen to make the bound tight at the expansion point.
    """
    p_full = precoder.stacked
    q = p_full @ herm(p_full)
    out = []
    for k, st in enumerate(stats):
        g = tx_field_matrix(t, st, wavelength)
        f = rx_field_matrix(rs[k], st, wavelength)
        p_minus = precoder.excluding(k)
        q_minus = p_minus @ herm(p_minus)
        state_pos = de_fixed_point(g, f, q, st, noise_power, max_iters, tol)
        state_neg = de_fixed_point(g, f, q_minus, st, noise_power,
                                   max_iters, tol)
        gt_pos = gamma_tilde(state_pos, f, st, noise_power)
        gt_neg = gamma_tilde(state_neg, f, st, noise_power)
        l_t = g.shape[0]
        eye = np.eye(l_t)
        plus = np.linalg.solve(eye + gt_pos @ (g @ q @ herm(g)), gt_pos)
        minus = np.linalg.solve(eye + gt_neg @ (g @ q_minus @ herm(g)),
                                gt_neg)
        b_bar = _clip_psd_keep_herm(minus - plus)
        a_bar = minus @ g @ precoder.blocks[k]
        rate_pos = rate_transmit_term(state_pos, g, f, q, st, noise_power)
        rate_neg = rate_transmit_term(state_neg, g, f, q_minus, st,
                                      noise_power)
        rate = rate_pos - rate_neg
        gp = g @ precoder.blocks[k]
        c_bar = (rate
                 + np.trace(b_bar @ g @ q @ herm(g)).real
                 - 2.0 * np.trace(herm(a_bar) @ gp).real)
        out.append(MinorizerParams(a_bar, b_bar, float(c_bar), float(rate)))
    return out


def _clip_psd_keep_herm(b):
    w, v = np.linalg.eigh(hermitize(b))
    w = np.clip(w, 0.0, None)
    return (v * w) @ herm(v)


def minorizer_value(t: Apv, precoder, params: list[MinorizerParams],
                    stats: list[ChannelStatistics],
                    wavelength: float) -> np.ndarray:
    """Per-terminal minorizer values (nats) at arbitrary (t, P)."""
    p_full = precoder.stacked
    q = p_full @ herm(p_full)
    vals = np.zeros(len(params))
    for k, (par, st) in enumerate(zip(params, stats)):
        g = tx_field_matrix(t, st, wavelength)
        gp = g @ precoder.blocks[k]
        vals[k] = (2.0 * np.trace(herm(par.a_bar) @ gp).real
                   - np.trace(par.b_bar @ g @ q @ herm(g)).real
                   + par.c_bar)
    return vals
