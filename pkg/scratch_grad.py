import numpy as np

from mamimo.config import ScenarioConfig
from mamimo.channel import centered_grid, sample_scenario, tx_field_matrix
from mamimo import de
from mamimo._linalg import herm
from mamimo.precoder import PrecoderSet
from scratch_probe import dft_precoder

cfg = ScenarioConfig(n_tx=6, n_rx=2, n_users=2, streams=2, paths_tx=4,
                     paths_rx=4, region_tx=0.15, region_rx=0.15)
stats = sample_scenario(cfg, 11)
t = centered_grid(cfg.n_tx, cfg.min_spacing, cfg.region_tx)
rs = [centered_grid(cfg.n_rx, cfg.min_spacing, cfg.region_rx)
      for _ in range(cfg.n_users)]
P = dft_precoder(cfg.n_tx, cfg.n_users, cfg.streams, cfg.p_max)
s2 = cfg.noise_power
wl = cfg.wavelength

params = de.minorizer_params(t, rs, P, stats, s2, wl, max_iters=200, tol=1e-12)

# tangency check
for k in range(cfg.n_users):
    direct = de.de_rate_transmit(t, P, rs[k], stats[k], s2, wl,
                                 max_iters=200, tol=1e-12, ut_index=k)
    mv = de.minorizer_value(t, P, params, stats, wl)[k]
    print(f"UT{k} tangency: rate={direct:.10f} minor={mv:.10f} "
          f"rel={abs(direct-mv)/abs(direct):.2e}")

# gradient in P: FD of the full DE net rate of UT k w.r.t. P blocks vs
# analytic minorizer gradient dR_k/dPbar_j = G^H A [j==k] - G^H B G P_j
k = 0
st = stats[k]
g = tx_field_matrix(t, st, wl)
rng = np.random.default_rng(5)


def rate_at(pmat):
    pset = PrecoderSet([pmat[:, :cfg.streams], pmat[:, cfg.streams:]])
    return de.de_rate_transmit(t, pset, rs[k], st, s2, wl,
                               max_iters=300, tol=1e-13, ut_index=k)


p0 = P.stacked
grad_analytic = np.zeros_like(p0)
s_total = cfg.streams * cfg.n_users
gb = herm(g) @ params[k].b_bar @ g
for j in range(cfg.n_users):
    cols = slice(j * cfg.streams, (j + 1) * cfg.streams)
    grad_analytic[:, cols] = -gb @ p0[:, cols]
    if j == k:
        grad_analytic[:, cols] += herm(g) @ params[k].a_bar

# directional FD: dR = 2 Re tr(grad^H dP)
errs = []
for trial in range(6):
    d = (rng.standard_normal(p0.shape) + 1j * rng.standard_normal(p0.shape))
    d *= np.linalg.norm(p0) / np.linalg.norm(d)
    h = 1e-6
    fd = (rate_at(p0 + h * d) - rate_at(p0 - h * d)) / (2 * h)
    an = 2 * np.trace(herm(grad_analytic) @ d).real
    errs.append(abs(fd - an) / max(abs(fd), 1e-12))
print("P-grad dir errs:", ["%.2e" % e for e in errs])

# gradient in t of the net DE rate vs analytic from minorizer structure
from mamimo.montecarlo import fd_gradient


def rate_at_t(vec):
    tt = t.with_vector(vec)
    return de.de_rate_transmit(tt, P, rs[k], st, s2, wl,
                               max_iters=300, tol=1e-13, ut_index=k)


dx = 1j * 2 * np.pi / wl * np.sin(st.angles.theta_tx) * np.cos(st.angles.phi_tx)
dy = 1j * 2 * np.pi / wl * np.cos(st.angles.theta_tx)
pk = P.blocks[k]
q = p0 @ herm(p0)
gx = 2 * np.einsum("ns,sn->n", pk @ herm(params[k].a_bar),
                   (dx[:, None] * g), optimize=True).real \
    - 2 * np.einsum("nm,mn->n", q @ herm(g) @ params[k].b_bar,
                    (dx[:, None] * g), optimize=True).real
gy = 2 * np.einsum("ns,sn->n", pk @ herm(params[k].a_bar),
                   (dy[:, None] * g), optimize=True).real \
    - 2 * np.einsum("nm,mn->n", q @ herm(g) @ params[k].b_bar,
                    (dy[:, None] * g), optimize=True).real
analytic_t = np.concatenate([gx, gy])
fd_t = fd_gradient(rate_at_t, t.as_vector(), 1e-6 * wl)
rel = np.abs(fd_t - analytic_t) / max(np.linalg.norm(fd_t), 1e-12)
print(f"t-grad max abs-rel-to-norm err: {rel.max():.2e} "
      f"(|fd|={np.linalg.norm(fd_t):.3e})")
