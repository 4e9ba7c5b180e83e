import numpy as np

from mamimo.config import ScenarioConfig
from mamimo.channel import centered_grid, sample_scenario, tx_field_matrix
from mamimo import de
from mamimo.precoder import PowerModel, optimal_precoder
from mamimo.apv_transmit import grad_ee_transmit
from mamimo.montecarlo import fd_gradient
from scratch_probe import dft_precoder

cfg = ScenarioConfig(n_tx=6, n_rx=2, n_users=2, streams=2, paths_tx=4,
                     paths_rx=4, region_tx=0.15, region_rx=0.15)
stats = sample_scenario(cfg, 11)
t0 = centered_grid(cfg.n_tx, cfg.min_spacing, cfg.region_tx)
rs = [centered_grid(cfg.n_rx, cfg.min_spacing, cfg.region_rx)
      for _ in range(cfg.n_users)]
P = dft_precoder(cfg.n_tx, cfg.n_users, cfg.streams, cfg.p_max)
s2, wl = cfg.noise_power, cfg.wavelength

params = de.minorizer_params(t0, rs, P, stats, s2, wl, max_iters=200,
                             tol=1e-12)

for p_max, label in ((1e6, "dinkelbach"), (1e-4, "waterfilling")):
    pm = PowerModel(cfg.amp_inefficiency, p_max, cfg.p_circuit,
                    cfg.p_static, cfg.n_tx)

    def ee_at(vec):
        t = t0.with_vector(vec)
        g_list = [tx_field_matrix(t, st, wl) for st in stats]
        return optimal_precoder(g_list, params, pm, tol=1e-13).ee

    rng = np.random.default_rng(2)
    vec = t0.as_vector() + rng.uniform(-0.002, 0.002, 2 * cfg.n_tx)
    t = t0.with_vector(vec)
    g_list = [tx_field_matrix(t, st, wl) for st in stats]
    report = optimal_precoder(g_list, params, pm, tol=1e-13)
    assert report.branch == label, (report.branch, label)
    grad = grad_ee_transmit(t, params, stats, pm, report, wl, g_list=g_list)
    fd = fd_gradient(ee_at, vec, 1e-7 * wl)
    rel = np.linalg.norm(fd - grad) / np.linalg.norm(fd)
    print(f"{label}: |fd|={np.linalg.norm(fd):.4e} rel-err={rel:.2e}")
