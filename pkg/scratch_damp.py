import numpy as np

from mamimo.config import ScenarioConfig
from mamimo.channel import centered_grid, sample_scenario, tx_field_matrix, rx_field_matrix
from mamimo import de
from mamimo._linalg import herm, herm_sqrt, hermitize, rel_change
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


def sweep_experiment(mix):
    mask = st.nlos_mask
    qhalf = herm_sqrt(q)
    gq = g @ qhalf
    hq = herm(f) @ st.los_response @ gq
    m = f.shape[1]
    n = g.shape[1]
    eye_m = np.eye(m, dtype=complex)
    eye_n = np.eye(n, dtype=complex)
    phi_t, phi, phi_inv = eye_m.copy(), eye_n.copy(), eye_n.copy()
    theta_t = de._update_theta_tilde(phi_t, phi_inv, hq, s2)
    theta = de._update_theta(phi_inv, theta_t, hq, s2)
    res_hist = []
    for it in range(200):
        et = de._eta_tilde_vec(theta, gq, mask)
        ev = de._eta_vec(theta_t, f, mask)
        phi_t_new = eye_m - herm(f) @ (et[:, None] * f)
        phi_new = eye_n - herm(gq) @ (ev[:, None] * gq)
        phi_t_new = mix * phi_t_new + (1 - mix) * phi_t
        phi_new = mix * phi_new + (1 - mix) * phi
        phi_inv_new = np.linalg.inv(phi_new)
        theta_t_new = de._update_theta_tilde(phi_t_new, phi_inv_new, hq, s2)
        theta_new = de._update_theta(phi_inv_new, theta_t_new, hq, s2)
        theta_t_new = hermitize(mix * theta_t_new + (1 - mix) * theta_t)
        theta_new = hermitize(mix * theta_new + (1 - mix) * theta)
        res = max(rel_change(phi_t_new, phi_t), rel_change(phi_new, phi),
                  rel_change(theta_t_new, theta_t), rel_change(theta_new, theta))
        res_hist.append(res)
        phi_t, phi, phi_inv = phi_t_new, phi_new, phi_inv_new
        theta_t, theta = theta_t_new, theta_new
        if res < 1e-11:
            break
    return res_hist


for mix in (1.0, 0.5):
    h = sweep_experiment(mix)
    print(f"mix={mix}: iters={len(h)} final={h[-1]:.2e} "
          f"first10={['%.1e' % v for v in h[:10]]}")
    print("   tail:", ["%.1e" % v for v in h[-6:]])
