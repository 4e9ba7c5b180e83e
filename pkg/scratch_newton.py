import time

import numpy as np

from mamimo.config import ScenarioConfig
from mamimo.channel import centered_grid, sample_scenario, tx_field_matrix, rx_field_matrix
from mamimo import de
from mamimo._linalg import herm, herm_sqrt, hermitize
from scratch_probe import dft_precoder

cfg = ScenarioConfig()
stats = sample_scenario(cfg, 3)
t = centered_grid(cfg.n_tx, cfg.min_spacing, cfg.region_tx)
r = centered_grid(cfg.n_rx, cfg.min_spacing, cfg.region_rx)
P = dft_precoder(cfg.n_tx, cfg.n_users, cfg.streams, cfg.p_max)
s2 = cfg.noise_power
wl = cfg.wavelength
st = stats[0]
g = tx_field_matrix(t, st, wl)
f = rx_field_matrix(r, st, wl)
p_full = P.stacked
q = p_full @ herm(p_full)

mask = st.nlos_mask
qhalf = herm_sqrt(q)
gq = g @ qhalf
hq = herm(f) @ st.los_response @ gq
m = f.shape[1]
n = g.shape[1]
l_r, l_t = mask.shape
eye_m = np.eye(m, dtype=complex)
eye_n = np.eye(n, dtype=complex)


def apply_map(z):
    et, ev = z[:l_r], z[l_r:]
    phi_t = eye_m - herm(f) @ (et[:, None] * f)
    phi = eye_n - herm(gq) @ (ev[:, None] * gq)
    phi_inv = np.linalg.inv(phi)
    theta_t = de._update_theta_tilde(phi_t, phi_inv, hq, s2)
    theta = de._update_theta(phi_inv, theta_t, hq, s2)
    et2 = de._eta_tilde_vec(theta, gq, mask).real
    ev2 = de._eta_vec(theta_t, f, mask).real
    return np.concatenate([et2, ev2])


# start from a few plain sweeps
z = np.zeros(l_r + l_t)
t0 = time.time()
for _ in range(5):
    z = apply_map(z)

for it in range(60):
    fz = apply_map(z)
    res = fz - z
    rn = np.linalg.norm(res) / max(np.linalg.norm(z), 1e-300)
    if rn < 1e-13:
        break
    # FD Jacobian of residual map
    dim = z.size
    J = np.zeros((dim, dim))
    for i in range(dim):
        h = 1e-6 * max(abs(z[i]), np.abs(z).max(), 1e-12)
        zp = z.copy(); zp[i] += h
        J[:, i] = ((apply_map(zp) - zp) - res) / h
    step = np.linalg.solve(J, -res)
    z = z + step
print(f"newton iters={it} relres={rn:.2e} time={time.time()-t0:.3f}s")

# verify: rebuild full state and compare transmit/receive view
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
