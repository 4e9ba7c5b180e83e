import time

import numpy as np

from scratch_newton import apply_map, l_r, l_t


def anderson_solve(dim, memory=6, iters=200, tol=1e-12):
    z = np.zeros(dim)
    zs, fs = [], []
    res_norm = np.inf
    t0 = time.time()
    for it in range(iters):
        fz = apply_map(z)
        res = fz - z
        scale = max(np.linalg.norm(fz), 1e-300)
        res_norm = np.linalg.norm(res) / scale
        if res_norm < tol:
            break
        zs.append(z.copy())
        fs.append(fz.copy())
        if len(zs) > memory + 1:
            zs.pop(0)
            fs.pop(0)
        mk = len(zs) - 1
        if mk == 0:
            z = fz
            continue
        # residuals matrix for least squares on increments
        R = np.stack([fs[i] - zs[i] for i in range(len(zs))], axis=1)
        dR = R[:, 1:] - R[:, :-1]
        dF = np.stack([fs[i + 1] - fs[i] for i in range(mk)], axis=1)
        gamma, *_ = np.linalg.lstsq(dR, R[:, -1], rcond=None)
        z_new = fz - dF @ gamma
        # safeguard: only accept if the residual actually shrinks
        res_new = np.linalg.norm(apply_map(z_new) - z_new) / scale
        if np.isfinite(res_new) and res_new < res_norm:
            z = z_new
        else:
            z = fz
    return z, it, res_norm, time.time() - t0


z, it, rn, dt = anderson_solve(l_r + l_t)
print(f"anderson iters={it} relres={rn:.2e} time={dt:.3f}s")

import numpy as np
from mamimo import de
from mamimo._linalg import herm
from scratch_newton import (eye_m, eye_n, f, g, gq, hq, mask, q, s2, st)

et, ev = z[:l_r], z[l_r:]
phi_t = eye_m - herm(f) @ (et[:, None] * f)
phi = eye_n - herm(gq) @ (ev[:, None] * gq)
phi_inv = np.linalg.inv(phi)
theta_t = de._update_theta_tilde(phi_t, phi_inv, hq, s2)
theta = de._update_theta(phi_inv, theta_t, hq, s2)
state = de.DEState(phi_t, phi, theta_t, theta, rn, it, True, phi_inv)
pos = de.rate_transmit_term(state, g, f, q, st, s2)
gam = de.gamma_receive(state, g, q, st, s2)
rec = de.rate_receive_term(state, f, gam, s2)
print(f"pos={pos:.8f} rec={rec:.8f} gap={abs(pos-rec):.2e}")
