import numpy as np

from mamimo.config import ScenarioConfig
from mamimo.channel import centered_grid, sample_scenario
from mamimo import de
from mamimo.apv_receive import (build_receive_objective, build_receive_ctx,
                                receive_newton_candidate,
                                receive_surrogate_value, surrogate_system)
from mamimo.montecarlo import fd_gradient
from scratch_probe import dft_precoder

cfg = ScenarioConfig(n_tx=6, n_rx=3, n_users=2, streams=2, paths_tx=4,
                     paths_rx=4, region_tx=0.15, region_rx=0.15)
stats = sample_scenario(cfg, 11)
t = centered_grid(cfg.n_tx, cfg.min_spacing, cfg.region_tx)
rs = [centered_grid(cfg.n_rx, cfg.min_spacing, cfg.region_rx)
      for _ in range(cfg.n_users)]
P = dft_precoder(cfg.n_tx, cfg.n_users, cfg.streams, cfg.p_max)
s2, wl = cfg.noise_power, cfg.wavelength

k = 0
obj = build_receive_objective(t, P, rs[k], stats[k], s2, wl, k,
                              max_iters=200, tol=1e-12)

# view consistency: frozen objective at expansion == transmit-view net rate
net_t = de.de_rate_transmit(t, P, rs[k], stats[k], s2, wl, max_iters=200,
                            tol=1e-12, ut_index=k)
net_r = obj.evaluate(rs[k])
print(f"view: t={net_t:.10f} r={net_r:.10f} gap={abs(net_t-net_r):.2e}")

ctx = build_receive_ctx(rs[k], obj)
delta_r = cfg.delta_r

# tangency of the surrogate
sv = receive_surrogate_value(rs[k], ctx, delta_r)
print(f"tangency: surrogate={sv:.10f} objective={net_r:.10f} "
      f"gap={abs(sv-net_r):.2e}")

# gradient tangency: b vs FD of the frozen objective
a_mat, b = surrogate_system(ctx, delta_r)
fd = fd_gradient(lambda v: obj.evaluate(rs[k].with_vector(v)),
                 rs[k].as_vector(), 1e-7 * wl)
print(f"grad: |fd|={np.linalg.norm(fd):.4e} "
      f"rel={np.linalg.norm(fd - b)/np.linalg.norm(fd):.2e}")

# surrogate gradient via FD matches b - A u at a shifted point
rng = np.random.default_rng(0)
u = rng.uniform(-1e-3, 1e-3, 2 * cfg.n_rx)
shift = rs[k].with_vector(rs[k].as_vector() + u)
fd_s = fd_gradient(lambda v: receive_surrogate_value(
    rs[k].with_vector(v), ctx, delta_r), shift.as_vector(), 1e-8)
an_s = b - a_mat @ u
print(f"surrogate grad rel: "
      f"{np.linalg.norm(fd_s - an_s)/np.linalg.norm(an_s):.2e}")

# A PSD with min eig >= 2 delta_r
w = np.linalg.eigvalsh(a_mat)
print(f"A min eig = {w.min():.6e} vs 2*delta_r = {2*delta_r:.6e}")

# newton stationarity
cand = receive_newton_candidate(ctx, delta_r)
resid = b - a_mat @ (cand.as_vector() - rs[k].as_vector())
print(f"newton residual: {np.linalg.norm(resid):.2e} (|b|={np.linalg.norm(b):.2e})")
