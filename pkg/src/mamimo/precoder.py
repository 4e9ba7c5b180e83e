"""Optimal precoding for a fixed transmit array layout.

Maximizing the quadratic rate bound divided by an affine-plus-quadratic
power model is a concave-convex fractional program. The unconstrained
optimum comes from a Dinkelbach iteration with closed-form inner updates;
if it overshoots the power budget, the optimum sits on the full-power
sphere and a water-filling multiplier found by bisection takes over.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._linalg import herm, hermitize


class PrecoderError(RuntimeError):
    pass


@dataclass
class PrecoderSet:
    """Per-terminal precoding blocks plus their stacked view."""

    blocks: list[np.ndarray]

    @property
    def stacked(self) -> np.ndarray:
        return np.hstack(self.blocks)

    def excluding(self, k: int) -> np.ndarray:
        rest = [b for i, b in enumerate(self.blocks) if i != k]
        if rest:
            return np.hstack(rest)
        n = self.blocks[0].shape[0]
        return np.zeros((n, 0), dtype=complex)

    def tx_power(self) -> float:
        return float(sum(np.sum(np.abs(b) ** 2) for b in self.blocks))

    def scaled(self, factor: float) -> "PrecoderSet":
        return PrecoderSet([factor * b for b in self.blocks])

    @classmethod
    def zeros(cls, n_tx: int, sizes: list[int]) -> "PrecoderSet":
        return cls([np.zeros((n_tx, s), dtype=complex) for s in sizes])


@dataclass(frozen=True)
class PowerModel:
    """Affine consumption model: amplifier draw plus circuit overheads."""

    amp_inefficiency: float
    p_max: float
    p_circuit: float
    p_static: float
    n_tx: int

    def __post_init__(self):
        for name in ("amp_inefficiency", "p_max", "p_circuit", "p_static"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @classmethod
    def from_config(cls, cfg) -> "PowerModel":
        return cls(cfg.amp_inefficiency, cfg.p_max, cfg.p_circuit,
                   cfg.p_static, cfg.n_tx)

    def overhead(self) -> float:
        return self.n_tx * self.p_circuit + self.p_static


def total_power(precoder: PrecoderSet, pm: PowerModel) -> float:
    """Consumed power in watts for a given precoder."""
    return pm.amp_inefficiency * precoder.tx_power() + pm.overhead()


@dataclass
class PrecoderReport:
    """Solution of the inner precoder problem plus solver metadata.

    The branch tag and the spectral factorization of the curvature sum are
    kept because the position gradient needs them.
    """

    precoder: PrecoderSet
    branch: str                     # 'dinkelbach' or 'waterfilling'
    ee: float                       # objective value at the solution
    eta: float | None = None        # final Dinkelbach level
    mu: float | None = None         # water-filling multiplier
    iterations: int = 0
    converged: bool = True
    eigvecs: np.ndarray | None = None
    eigvals: np.ndarray | None = None


@dataclass
class _Factorized:
    """Eigen-factorized curvature sum and the projected linear terms."""

    u: np.ndarray             # (N, N)
    lam: np.ndarray           # (N,)
    v_blocks: list[np.ndarray]  # U^H G_k^H A_k, shape (N, s_k)
    rowsq: np.ndarray         # per-eigendirection squared linear weight
    c_sum: float


def _factorize(g_list, params):
    n = g_list[0].shape[1]
    s = np.zeros((n, n), dtype=complex)
    for g, par in zip(g_list, params):
        s += herm(g) @ par.b_bar @ g
    lam, u = np.linalg.eigh(hermitize(s))
    lam = np.clip(lam, 0.0, None)
    v_blocks = [herm(u) @ herm(g) @ par.a_bar
                for g, par in zip(g_list, params)]
    rowsq = np.zeros(n)
    for v in v_blocks:
        rowsq += np.sum(np.abs(v) ** 2, axis=1)
    c_sum = float(sum(par.c_bar for par in params))
    return _Factorized(u, lam, v_blocks, rowsq, c_sum)


def _blocks_at(fac: _Factorized, alpha: float) -> list[np.ndarray]:
    d = 1.0 / (fac.lam + alpha)
    return [fac.u @ (d[:, None] * v) for v in fac.v_blocks]


def _power_at(fac: _Factorized, alpha: float) -> float:
    d = 1.0 / (fac.lam + alpha)
    return float(np.sum(d ** 2 * fac.rowsq))


def _objective_at(fac: _Factorized, alpha: float, pm: PowerModel):
    """(rate-bound sum, tx power, EE) of the candidate at level alpha."""
    d = 1.0 / (fac.lam + alpha)
    tx = float(np.sum(d ** 2 * fac.rowsq))
    rate = float(2.0 * np.sum(d * fac.rowsq)
                 - np.sum(fac.lam * d ** 2 * fac.rowsq) + fac.c_sum)
    ee = rate / (pm.amp_inefficiency * tx + pm.overhead())
    return rate, tx, ee


def minorizer_sum(g_list, params, precoder: PrecoderSet) -> float:
    """Sum over terminals of the quadratic rate bound at P."""
    p = precoder.stacked
    q = p @ herm(p)
    total = 0.0
    for g, par, blk in zip(g_list, params, precoder.blocks):
        total += (2.0 * np.trace(herm(par.a_bar) @ g @ blk).real
                  - np.trace(par.b_bar @ g @ q @ herm(g)).real
                  + par.c_bar)
    return float(total)


def system_ee(g_list, params, precoder: PrecoderSet, pm: PowerModel) -> float:
    """Rate-bound sum divided by consumed power (nats per joule per Hz)."""
    return minorizer_sum(g_list, params, precoder) / total_power(precoder, pm)


_RIDGE = 1e-14


def dinkelbach_unconstrained(g_list, params, pm: PowerModel,
                             tol: float = 1e-10,
                             max_iters: int = 100) -> PrecoderReport:
    """Unconstrained EE maximization by Dinkelbach's parametric method.

    Alternates the level update (current EE) with the closed-form
    maximizer of rate minus level-weighted power. The level sequence is
    nondecreasing; iteration stops when it stalls within `tol`.
    """
    fac = _factorize(g_list, params)
    sizes = [par.a_bar.shape[1] for par in params]
    n = g_list[0].shape[1]
    if all(np.linalg.norm(par.a_bar) == 0.0 for par in params):
        p0 = PrecoderSet.zeros(n, sizes)
        return PrecoderReport(p0, "dinkelbach", fac.c_sum / pm.overhead(),
                              eta=fac.c_sum / pm.overhead(), iterations=0,
                              eigvecs=fac.u, eigvals=fac.lam)

    ridge = _RIDGE * max(1.0, fac.lam.max())
    # Feasible start: full power if reachable, otherwise the unregularized
    # candidate (which then consumes less than the budget).
    alpha0 = _bisect_power(fac, pm.p_max, 1e-10)[0] \
        if _power_at(fac, ridge) > pm.p_max else ridge
    _, _, ee = _objective_at(fac, alpha0, pm)
    eta = max(ee, 0.0)
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        alpha = max(eta * pm.amp_inefficiency, ridge)
        _, _, ee = _objective_at(fac, alpha, pm)
        if not np.isfinite(ee):
            raise PrecoderError("non-finite EE level in Dinkelbach iteration")
        if ee < eta - 1e-10 * max(1.0, abs(eta)):
            raise PrecoderError(
                f"Dinkelbach level decreased ({eta} -> {ee}); "
                "minorizer coefficients are inconsistent")
        if abs(ee - eta) <= tol * max(1.0, abs(eta)):
            eta = ee
            converged = True
            break
        eta = ee
    alpha = max(eta * pm.amp_inefficiency, ridge)
    precoder = PrecoderSet(_blocks_at(fac, alpha))
    return PrecoderReport(precoder, "dinkelbach", eta, eta=eta,
                          iterations=iterations, converged=converged,
                          eigvecs=fac.u, eigvals=fac.lam)


def _bisect_power(fac: _Factorized, p_target: float, tol: float):
    """Find alpha with tx power == p_target; power is decreasing in alpha."""
    scale = max(float(fac.lam.mean()), 1.0)
    lo = 1e-12 * scale
    p_lo = _power_at(fac, lo)
    if p_lo < p_target * (1.0 - 1e-9):
        raise PrecoderError(
            "full-power branch dispatched but the unregularized precoder "
            f"only reaches {p_lo:.3e} W < {p_target:.3e} W")
    hi = max(1.0, lo)
    while _power_at(fac, hi) >= p_target:
        hi *= 2.0
        if hi > 1e30:
            raise PrecoderError("water-filling bracket blew up")
    prev_power = p_lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        p_mid = _power_at(fac, mid)
        if p_mid > prev_power + 1e-9 * max(prev_power, 1.0) and mid > lo:
            raise PrecoderError("power is not decreasing in the multiplier")
        if p_mid >= p_target:
            lo, p_lo = mid, p_mid
        else:
            hi = mid
        if abs(p_mid - p_target) <= tol * p_target:
            return mid, p_mid
    return lo, p_lo


def water_filling_full_power(g_list, params, p_max: float,
                             tol: float = 1e-10) -> PrecoderReport:
    """Rate-bound maximization on the full-power sphere.

    The regularized-inverse structure is shared with Dinkelbach; only the
    multiplier changes, so the eigendecomposition is reused across
    bisection trials.
    """
    fac = _factorize(g_list, params)
    mu, power = _bisect_power(fac, p_max, tol)
    precoder = PrecoderSet(_blocks_at(fac, mu))
    return PrecoderReport(precoder, "waterfilling",
                          ee=0.0, mu=mu, eigvecs=fac.u, eigvals=fac.lam)


def optimal_precoder(g_list, params, pm: PowerModel,
                     tol: float = 1e-10) -> PrecoderReport:
    """Inner-layer EE-optimal precoder with branch dispatch.

    Returns the unconstrained Dinkelbach solution when it fits the power
    budget (boundary counted as feasible), otherwise the full-power
    water-filling solution.
    """
    report = dinkelbach_unconstrained(g_list, params, pm, tol=tol)
    if report.precoder.tx_power() <= pm.p_max * (1.0 + 1e-9):
        report.ee = system_ee(g_list, params, report.precoder, pm)
        return report
    report = water_filling_full_power(g_list, params, pm.p_max, tol=tol)
    report.ee = system_ee(g_list, params, report.precoder, pm)
    return report
