"""Alternating optimization driver and benchmark scheme variants.

One outer iteration rebuilds the rate minorizer at the current point,
re-optimizes the transmit layout and precoder against it, refreshes the
receive-view rate functions at the new transmit variables, and then moves
each terminal's receive layout. Every block is an ascent step on a tight
surrogate, so the efficiency trace is nondecreasing; cheap guards revert
any update whose re-converged objective regressed through surrogate
mismatch, keeping the trace monotone to the last bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import ScenarioConfig
from .channel import (Apv, ChannelStatistics, centered_grid, rx_field_matrix,
                      tx_field_matrix)
from .de import de_fixed_point, minorizer_params, rate_transmit_term
from .precoder import (PowerModel, PrecoderReport, PrecoderSet,
                       optimal_precoder, total_power)
from .apv_transmit import ScaKnobs, grad_ee_transmit, sca_transmit
from .apv_receive import build_receive_objective, sca_receive
from .montecarlo import McEstimate, mc_average_rate
from ._linalg import herm

SCHEMES = ("MA", "TMA", "RMA", "DPS", "UPA", "MA-LOS")
UPA_SPACING_WAVELENGTHS = 0.5


@dataclass(frozen=True)
class SchemeSpec:
    """Benchmark scheme and the grid spacing its fixed arrays use."""

    name: str
    grid_spacing: float

    @classmethod
    def make(cls, name: str, config: ScenarioConfig) -> "SchemeSpec":
        name = name.upper().replace("_", "-")
        if name not in SCHEMES:
            raise ValueError(f"unknown scheme {name!r}; pick from {SCHEMES}")
        return cls(name, UPA_SPACING_WAVELENGTHS * config.wavelength)

    @property
    def tx_movable(self) -> bool:
        return self.name in ("MA", "TMA", "DPS", "MA-LOS")

    @property
    def rx_movable(self) -> bool:
        return self.name in ("MA", "RMA", "DPS", "MA-LOS")

    @property
    def discrete(self) -> bool:
        return self.name == "DPS"

    @property
    def design_on_los_only(self) -> bool:
        return self.name == "MA-LOS"


@dataclass
class IterationRecord:
    ee: float                 # DE-based EE after the iteration [nats/J/Hz]
    sum_rate: float           # nats
    tx_power: float           # W
    t: np.ndarray
    rs: list[np.ndarray]
    branch: str
    de_residual: float
    tx_reverted: bool = False
    rx_reverted: int = 0


@dataclass
class RunTrace:
    scheme: str
    seed: int | None
    records: list[IterationRecord] = field(default_factory=list)
    final_t: Apv | None = None
    final_rs: list[Apv] | None = None
    final_precoder: PrecoderSet | None = None
    final_ee_de: float = math.nan      # under the true statistics
    final_sum_rate_de: float = math.nan
    final_ee_mc: McEstimate | None = None
    iterations_run: int = 0
    iterations_to_converge: int | None = None

    @property
    def ee_trace(self) -> np.ndarray:
        return np.array([rec.ee for rec in self.records])


def initial_precoder(config: ScenarioConfig) -> PrecoderSet:
    """Deterministic full-power start: scaled unitary (DFT) columns."""
    n = config.n_tx
    cols = np.fft.fft(np.eye(n)) / math.sqrt(n)
    scale = math.sqrt(config.p_max / (config.n_users * config.streams))
    blocks = []
    idx = 0
    for _ in range(config.n_users):
        pick = [c % n for c in range(idx, idx + config.streams)]
        blocks.append(scale * cols[:, pick].astype(complex))
        idx += config.streams
    return PrecoderSet(blocks)


def dps_grid(region: float, spacing: float):
    """Centered site lattice: floor(region/spacing) sites per side."""
    n_side = int(math.floor(region / spacing + 1e-9))
    if n_side < 1:
        raise ValueError("region too small for even one grid site")
    offset = 0.5 * (region - (n_side - 1) * spacing)
    return n_side, offset


def dps_initial(count: int, region: float, spacing: float) -> Apv:
    """Centered block of lattice sites, row-major."""
    n_side, offset = dps_grid(region, spacing)
    if count > n_side * n_side:
        raise ValueError(
            f"{count} antennas exceed the {n_side}x{n_side} site lattice")
    side = math.ceil(math.sqrt(count))
    start = max((n_side - side) // 2, 0)
    xs, ys = [], []
    for idx in range(count):
        i, j = divmod(idx, min(side, n_side))
        xs.append(offset + (start + j) * spacing)
        ys.append(offset + (start + i) * spacing)
    return Apv(np.array(xs), np.array(ys), region)


def dps_local_search(apv: Apv, objective, spacing: float,
                     max_sweeps: int = 50) -> Apv:
    """Coordinate-wise exhaustive neighborhood search on the site lattice.

    Antennas are visited in index order; each moves to the best among its
    current site and the four adjacent unoccupied sites, and the sweeps
    repeat until no move improves the objective by more than 1e-12. The
    result is a lattice-feasible local optimum.
    """
    n_side, offset = dps_grid(apv.region, spacing)
    idx = np.stack([np.round((apv.x - offset) / spacing),
                    np.round((apv.y - offset) / spacing)], axis=1).astype(int)
    rebuilt_x = offset + idx[:, 0] * spacing
    rebuilt_y = offset + idx[:, 1] * spacing
    if (np.max(np.abs(rebuilt_x - apv.x)) > 1e-9
            or np.max(np.abs(rebuilt_y - apv.y)) > 1e-9):
        raise ValueError("layout is not on the site lattice")

    def to_apv(indices):
        return Apv(offset + indices[:, 0] * spacing,
                   offset + indices[:, 1] * spacing, apv.region)

    best_val = objective(to_apv(idx))
    for _ in range(max_sweeps):
        improved = False
        for a in range(apv.count):
            occupied = {tuple(p) for b, p in enumerate(idx) if b != a}
            choices = [tuple(idx[a])]
            for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                cand = (idx[a, 0] + dx, idx[a, 1] + dy)
                if (0 <= cand[0] < n_side and 0 <= cand[1] < n_side
                        and cand not in occupied):
                    choices.append(cand)
            vals = []
            for cand in choices:
                trial = idx.copy()
                trial[a] = cand
                vals.append(best_val if cand == tuple(idx[a])
                            else objective(to_apv(trial)))
            pick = int(np.argmax(vals))
            if pick != 0 and vals[pick] > best_val + 1e-12:
                idx[a] = choices[pick]
                best_val = vals[pick]
                improved = True
        if not improved:
            break
    return to_apv(idx)


def initial_layouts(config: ScenarioConfig, spec: SchemeSpec):
    """Transmit and receive starting layouts for a scheme.

    Movable schemes start from the same centered grid as the fixed-array
    baseline so that paired comparisons isolate movability.
    """
    if spec.discrete:
        t = dps_initial(config.n_tx, config.region_tx, config.min_spacing)
        rs = [dps_initial(config.n_rx, config.region_rx, config.min_spacing)
              for _ in range(config.n_users)]
        return t, rs
    tx_spacing = (spec.grid_spacing if not spec.tx_movable
                  else config.min_spacing)
    rx_spacing = (spec.grid_spacing if not spec.rx_movable
                  else config.min_spacing)
    if tx_spacing < config.min_spacing - 1e-12:
        raise ValueError("fixed-array spacing violates the minimum distance")
    t = centered_grid(config.n_tx, tx_spacing, config.region_tx)
    rs = [centered_grid(config.n_rx, rx_spacing, config.region_rx)
          for _ in range(config.n_users)]
    return t, rs


def de_snapshot(t: Apv, rs, precoder, stats, noise_power: float,
                wavelength: float, max_iters: int, tol: float):
    """Fresh per-terminal net DE rates (nats) and the worst residual."""
    p_full = precoder.stacked
    q = p_full @ herm(p_full)
    rates = np.zeros(len(stats))
    residual = 0.0
    for k, st in enumerate(stats):
        g = tx_field_matrix(t, st, wavelength)
        f = rx_field_matrix(rs[k], st, wavelength)
        p_minus = precoder.excluding(k)
        q_minus = p_minus @ herm(p_minus)
        st_pos = de_fixed_point(g, f, q, st, noise_power, max_iters, tol)
        st_neg = de_fixed_point(g, f, q_minus, st, noise_power, max_iters,
                                tol)
        rate = (rate_transmit_term(st_pos, g, f, q, st, noise_power)
                - rate_transmit_term(st_neg, g, f, q_minus, st, noise_power))
        rates[k] = max(rate, 0.0)
        residual = max(residual, st_pos.residual, st_neg.residual)
    return rates, residual


def run_ao(config: ScenarioConfig, stats: list[ChannelStatistics],
           scheme: str = "MA", seed: int | None = None,
           mc_samples: int = 0, mc_seed: int = 0,
           converged_exit: int = 3) -> RunTrace:
    """Full alternating optimization under one benchmark scheme.

    Runs `config.ao_iters` outer iterations with an early exit after
    `converged_exit` consecutive sub-threshold increments. The trace
    records the design-statistics DE efficiency after every iteration;
    the final point is re-evaluated under the true statistics (and by
    Monte-Carlo when `mc_samples` > 0).
    """
    spec = SchemeSpec.make(scheme, config)
    pm = PowerModel.from_config(config)
    design_stats = ([st.los_only() for st in stats]
                    if spec.design_on_los_only else list(stats))
    s2, wl = config.noise_power, config.wavelength
    de_kw = dict(max_iters=max(config.de_iters, 60), tol=1e-10)
    knobs_t = ScaKnobs.transmit_from_config(config)
    knobs_r = ScaKnobs.receive_from_config(config)
    t, rs = initial_layouts(config, spec)
    precoder = initial_precoder(config)

    trace = RunTrace(spec.name, seed)
    rates, _ = de_snapshot(t, rs, precoder, design_stats, s2, wl, **de_kw)
    prev_ee = rates.sum() / total_power(precoder, pm)
    below = 0
    for _ in range(config.ao_iters):
        params = minorizer_params(t, rs, precoder, design_stats, s2, wl,
                                  **de_kw)
        branch = "none"
        if spec.tx_movable and spec.discrete:
            t_new, report = _dps_transmit_step(t, params, design_stats, pm,
                                               config, wl)
        elif spec.tx_movable:
            t_new, report, _ = sca_transmit(
                t, params, design_stats, pm, config.min_spacing, knobs_t, wl)
        else:
            g_list = [tx_field_matrix(t, st, wl) for st in design_stats]
            report = optimal_precoder(g_list, params, pm)
            t_new = t
        branch = report.branch
        p_new = report.precoder

        rates_new, resid = de_snapshot(t_new, rs, p_new, design_stats, s2,
                                       wl, **de_kw)
        ee_new = rates_new.sum() / total_power(p_new, pm)
        tx_reverted = False
        if ee_new < prev_ee:
            # surrogate mismatch beyond fixed-point noise: keep the old point
            t_new, p_new = t, precoder
            rates_new, resid = de_snapshot(t, rs, precoder, design_stats,
                                           s2, wl, **de_kw)
            ee_new = rates_new.sum() / total_power(precoder, pm)
            ee_new = max(ee_new, prev_ee)
            tx_reverted = True
        t, precoder = t_new, p_new

        rx_reverted = 0
        if spec.rx_movable:
            for k in range(config.n_users):
                objective = build_receive_objective(
                    t, precoder, rs[k], design_stats[k], s2, wl, k, **de_kw)
                if spec.discrete:
                    r_new = dps_local_search(rs[k], objective.evaluate,
                                             config.min_spacing)
                else:
                    r_new, _ = sca_receive(rs[k], objective,
                                           config.min_spacing, knobs_r)
                rate_new = _ut_rate(t, r_new, precoder, design_stats[k], s2,
                                    wl, k, de_kw)
                if rate_new >= rates_new[k]:
                    rs[k] = r_new
                    rates_new[k] = rate_new
                else:
                    rx_reverted += 1
        ee_now = max(rates_new.sum() / total_power(precoder, pm), prev_ee)

        trace.records.append(IterationRecord(
            ee_now, float(rates_new.sum()), precoder.tx_power(),
            t.as_vector(), [r.as_vector() for r in rs], branch, resid,
            tx_reverted, rx_reverted))
        increment = ee_now - prev_ee
        prev_ee = ee_now
        if increment < config.eps_stop:
            below += 1
            if trace.iterations_to_converge is None:
                trace.iterations_to_converge = len(trace.records)
        else:
            below = 0
            trace.iterations_to_converge = None
        if below >= converged_exit:
            break

    trace.iterations_run = len(trace.records)
    trace.final_t, trace.final_rs, trace.final_precoder = t, rs, precoder
    true_rates, _ = de_snapshot(t, rs, precoder, stats, s2, wl, **de_kw)
    trace.final_sum_rate_de = float(true_rates.sum())
    trace.final_ee_de = trace.final_sum_rate_de / total_power(precoder, pm)
    if mc_samples > 0:
        per_ut = mc_average_rate(t, rs, precoder, stats, s2, mc_samples,
                                 mc_seed, wl)
        mean = sum(e.mean for e in per_ut) / total_power(precoder, pm)
        std = math.sqrt(sum(e.std_error ** 2 for e in per_ut)) \
            / total_power(precoder, pm)
        trace.final_ee_mc = McEstimate(mean, std, mc_samples)
    return trace


def _ut_rate(t, r, precoder, stats_k, s2, wl, k, de_kw):
    g = tx_field_matrix(t, stats_k, wl)
    f = rx_field_matrix(r, stats_k, wl)
    p_full = precoder.stacked
    q = p_full @ herm(p_full)
    p_minus = precoder.excluding(k)
    q_minus = p_minus @ herm(p_minus)
    st_pos = de_fixed_point(g, f, q, stats_k, s2, **de_kw)
    st_neg = de_fixed_point(g, f, q_minus, stats_k, s2, **de_kw)
    rate = (rate_transmit_term(st_pos, g, f, q, stats_k, s2)
            - rate_transmit_term(st_neg, g, f, q_minus, stats_k, s2))
    return max(rate, 0.0)


def _dps_transmit_step(t, params, stats, pm, config, wl):
    cache: dict[bytes, PrecoderReport] = {}

    def inner(apv: Apv) -> PrecoderReport:
        key = apv.as_vector().tobytes()
        if key not in cache:
            g_list = [tx_field_matrix(apv, st, wl) for st in stats]
            cache[key] = optimal_precoder(g_list, params, pm)
        return cache[key]

    t_new = dps_local_search(t, lambda apv: inner(apv).ee,
                             config.min_spacing)
    return t_new, inner(t_new)


def run_single_user(config: ScenarioConfig, stats: list[ChannelStatistics],
                    seed: int | None = None, mc_samples: int = 0,
                    mc_seed: int = 0, mm_iters: int = 6,
                    converged_exit: int = 3) -> RunTrace:
    """Single-terminal specialization of the alternating optimization.

    With no interference the negative rate branch vanishes, so the inner
    precoder problem maximizes the DE rate itself over the power budget:
    a few minorize-and-reoptimize refreshes per evaluation, each reusing
    the Dinkelbach / water-filling pair. Position blocks are unchanged.
    """
    if config.n_users != 1:
        raise ValueError("run_single_user needs a single-terminal scenario")
    pm = PowerModel.from_config(config)
    st = stats[0]
    s2, wl = config.noise_power, config.wavelength
    de_kw = dict(max_iters=max(config.de_iters, 60), tol=1e-10)
    knobs_t = ScaKnobs.transmit_from_config(config)
    knobs_r = ScaKnobs.receive_from_config(config)
    t, rs = initial_layouts(config, SchemeSpec.make("MA", config))
    precoder = initial_precoder(config)

    def true_ee(t_, r_, pset):
        rates, _ = de_snapshot(t_, [r_], pset, [st], s2, wl, **de_kw)
        return rates[0] / total_power(pset, pm)

    param_store: dict[bytes, list] = {}

    def make_inner(r_now: Apv, p_warm: PrecoderSet):
        def inner(t_, g_list):
            p_cur = p_warm
            ee_cur = -math.inf
            report = None
            pars = None
            for _ in range(mm_iters):
                pars = minorizer_params(t_, [r_now], p_cur, [st], s2, wl,
                                        **de_kw)
                report = optimal_precoder(g_list, pars, pm)
                ee_new = true_ee(t_, r_now, report.precoder)
                p_cur = report.precoder
                if ee_new <= ee_cur + 1e-10 * max(1.0, abs(ee_cur)):
                    ee_cur = max(ee_new, ee_cur)
                    break
                ee_cur = ee_new
            report.ee = ee_cur
            param_store[t_.as_vector().tobytes()] = pars
            return report
        return inner

    def grad_fn(t_, g_list, report):
        pars = param_store[t_.as_vector().tobytes()]
        return grad_ee_transmit(t_, pars, [st], pm, report, wl,
                                g_list=g_list)

    trace = RunTrace("MA-SINGLE-USER", seed)
    prev_ee = true_ee(t, rs[0], precoder)
    below = 0
    for _ in range(config.ao_iters):
        inner = make_inner(rs[0], precoder)
        t_new, report, _ = sca_transmit(
            t, None, [st], pm, config.min_spacing, knobs_t, wl,
            inner_solver=inner, grad_fn=grad_fn)
        ee_new = report.ee
        tx_reverted = False
        if ee_new < prev_ee:
            t_new = t
            report = inner(t, [tx_field_matrix(t, st, wl)])
            ee_new = max(report.ee, prev_ee)
            tx_reverted = True
        t, precoder = t_new, report.precoder

        objective = build_receive_objective(t, precoder, rs[0], st, s2, wl,
                                            0, **de_kw)
        r_new, _ = sca_receive(rs[0], objective, config.min_spacing, knobs_r)
        ee_rx = true_ee(t, r_new, precoder)
        rx_reverted = 0
        if ee_rx >= ee_new:
            rs[0] = r_new
            ee_now = ee_rx
        else:
            rx_reverted = 1
            ee_now = ee_new
        ee_now = max(ee_now, prev_ee)

        rates_now, resid = de_snapshot(t, rs, precoder, [st], s2, wl,
                                       **de_kw)
        trace.records.append(IterationRecord(
            ee_now, float(rates_now.sum()), precoder.tx_power(),
            t.as_vector(), [rs[0].as_vector()], report.branch, resid,
            tx_reverted, rx_reverted))
        increment = ee_now - prev_ee
        prev_ee = ee_now
        if increment < config.eps_stop:
            below += 1
            if trace.iterations_to_converge is None:
                trace.iterations_to_converge = len(trace.records)
        else:
            below = 0
            trace.iterations_to_converge = None
        if below >= converged_exit:
            break

    trace.iterations_run = len(trace.records)
    trace.final_t, trace.final_rs, trace.final_precoder = t, rs, precoder
    rates, _ = de_snapshot(t, rs, precoder, stats, s2, wl, **de_kw)
    trace.final_sum_rate_de = float(rates.sum())
    trace.final_ee_de = trace.final_sum_rate_de / total_power(precoder, pm)
    if mc_samples > 0:
        per_ut = mc_average_rate(t, rs, precoder, stats, s2, mc_samples,
                                 mc_seed, wl)
        ptot = total_power(precoder, pm)
        trace.final_ee_mc = McEstimate(
            per_ut[0].mean / ptot, per_ut[0].std_error / ptot, mc_samples)
    return trace
