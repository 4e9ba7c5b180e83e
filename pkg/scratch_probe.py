"""Dev probe: DE vs MC, view consistency, and receive-gamma adjudication."""
import time

import numpy as np

from mamimo.config import ScenarioConfig
from mamimo.channel import centered_grid, sample_scenario, tx_field_matrix, rx_field_matrix
from mamimo.montecarlo import mc_average_rate
from mamimo import de
from mamimo.precoder import PrecoderSet
from mamimo._linalg import herm, herm_sqrt, hermitize


def dft_precoder(n, k, s, p_max):
    cols = np.fft.fft(np.eye(n)) / np.sqrt(n)
    blocks = []
    idx = 0
    for _ in range(k):
        b = cols[:, [c % n for c in range(idx, idx + s)]].astype(complex)
        idx += s
        blocks.append(b * np.sqrt(p_max / (k * s)))
    return PrecoderSet(blocks)


cfg = ScenarioConfig()
rng_seed = 3
stats = sample_scenario(cfg, rng_seed)
t = centered_grid(cfg.n_tx, cfg.min_spacing, cfg.region_tx)
rs = [centered_grid(cfg.n_rx, cfg.min_spacing, cfg.region_rx)
      for _ in range(cfg.n_users)]
P = dft_precoder(cfg.n_tx, cfg.n_users, cfg.streams, cfg.p_max)
s2 = cfg.noise_power
wl = cfg.wavelength

t0 = time.time()
mc = mc_average_rate(t, rs, P, stats, s2, 10000, 7, wl)
print("mc time", time.time() - t0)

p_full = P.stacked
q = p_full @ herm(p_full)

for k, st in enumerate(stats):
    g = tx_field_matrix(t, st, wl)
    f = rx_field_matrix(rs[k], st, wl)
    p_minus = P.excluding(k)
    q_minus = p_minus @ herm(p_minus)
    st_pos = de.de_fixed_point(g, f, q, st, s2, 40, 1e-11)
    st_neg = de.de_fixed_point(g, f, q_minus, st, s2, 40, 1e-11)
    pos = de.rate_transmit_term(st_pos, g, f, q, st, s2)
    neg = de.rate_transmit_term(st_neg, g, f, q_minus, st, s2)
    net = pos - neg

    # receive view, with phi_inv (implemented)
    gam_pos = de.gamma_receive(st_pos, g, q, st, s2)
    gam_neg = de.gamma_receive(st_neg, g, q_minus, st, s2)
    rec = (de.rate_receive_term(st_pos, f, gam_pos, s2)
           - de.rate_receive_term(st_neg, f, gam_neg, s2))

    # receive view, paper-literal (phi, not inverted)
    def gamma_literal(state, q_):
        qh = herm_sqrt(q_)
        b = st.los_response @ g @ qh
        los = b @ state.phi @ herm(b) / s2
        return hermitize(los) - de.eta_tilde(state.theta, g @ qh, st.nlos_mask)

    rec_lit = (de.rate_receive_term(st_pos, f, gamma_literal(st_pos, q), s2)
               - de.rate_receive_term(st_neg, f, gamma_literal(st_neg, q_minus), s2))

    print(f"UT{k}: mc={mc[k].mean:.5f}±{mc[k].std_error:.5f}  de={net:.5f} "
          f"(rel {abs(net - mc[k].mean) / mc[k].mean:.4%})  "
          f"rx={rec:.5f} (gap {abs(rec - net):.2e})  "
          f"rx_lit={rec_lit:.5f} (gap {abs(rec_lit - net):.2e})  "
          f"res={st_pos.residual:.1e}/{st_neg.residual:.1e} "
          f"it={st_pos.iterations}/{st_neg.iterations}")

de_sum = 0.0
mc_sum = sum(e.mean for e in mc)
for k, st in enumerate(stats):
    g = tx_field_matrix(t, st, wl)
    f = rx_field_matrix(rs[k], st, wl)
    st_pos = de.de_fixed_point(g, f, q, st, s2, 40, 1e-11)
    p_minus = P.excluding(k)
    qm = p_minus @ herm(p_minus)
    st_neg = de.de_fixed_point(g, f, qm, st, s2, 40, 1e-11)
    de_sum += (de.rate_transmit_term(st_pos, g, f, q, st, s2)
               - de.rate_transmit_term(st_neg, g, f, qm, st, s2))
print(f"sum: mc={mc_sum:.5f} de={de_sum:.5f} rel={abs(de_sum-mc_sum)/mc_sum:.4%}")
