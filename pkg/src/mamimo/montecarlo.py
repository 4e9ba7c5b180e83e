"""Monte-Carlo ground truth for average rates and finite-difference oracles.

Everything here is deliberately independent of the deterministic-equivalent
machinery: rates are averaged over explicit draws of the scattered path
gains, which is what the fixed-point analysis is validated against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import Apv, ChannelStatistics, rx_field_matrix, tx_field_matrix


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    samples: int


def _rng_from_seed(seed) -> np.random.Generator:
    """Counter-based stream so estimates are reproducible bit-for-bit."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(key=int(seed)))


def sample_nlos(mask: np.ndarray, rng: np.random.Generator,
                size: int) -> np.ndarray:
    """(size, L_r, L_t) draws of the scattered path-response matrix.

    Entries are mask-weighted standard complex Gaussians (real and
    imaginary parts i.i.d. with variance 1/2 each).
    """
    shape = (size,) + mask.shape
    w = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return mask[None, :, :] * (w / np.sqrt(2.0))


def mc_average_rate(t: Apv, rs: list[Apv], precoder, stats: list[ChannelStatistics],
                    noise_power: float, samples: int, seed,
                    wavelength: float) -> list[McEstimate]:
    """Per-terminal average rate (nats) by direct sampling.

    Each draw realizes the scattered paths, synthesizes the channel, and
    evaluates the log-det rate with and without the terminal's own signal
    in the received covariance.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = _rng_from_seed(seed)
    p_full = precoder.stacked
    estimates = []
    for k, st in enumerate(stats):
        g = tx_field_matrix(t, st, wavelength)
        f = rx_field_matrix(rs[k], st, wavelength)
        p_others = precoder.excluding(k)
        sigma = st.los_response[None, :, :] + sample_nlos(st.nlos_mask, rng,
                                                          samples)
        h = np.einsum("lm,slt,tn->smn", f.conj(), sigma, g, optimize=True)
        rate = _logdet_rate(h, p_full, noise_power) - _logdet_rate(
            h, p_others, noise_power)
        mean = float(rate.mean())
        if samples > 1:
            std_error = float(rate.std(ddof=1) / np.sqrt(samples))
        else:
            std_error = 0.0
        estimates.append(McEstimate(mean, std_error, samples))
    return estimates


def _logdet_rate(h: np.ndarray, p: np.ndarray, noise_power: float) -> np.ndarray:
    """log det(I + H P P^H H^H / sigma^2) for a batch of channels."""
    n_rx = h.shape[1]
    if p.shape[1] == 0:
        return np.zeros(h.shape[0])
    hp = h @ p
    gram = np.einsum("smi,sni->smn", hp, hp.conj(), optimize=True)
    eye = np.eye(n_rx)
    _, val = np.linalg.slogdet(eye[None, :, :] + gram / noise_power)
    return val


def mc_sum_rate(t, rs, precoder, stats, noise_power, samples, seed,
                wavelength) -> McEstimate:
    """Sum over terminals of the per-terminal estimates."""
    per_ut = mc_average_rate(t, rs, precoder, stats, noise_power, samples,
                             seed, wavelength)
    mean = sum(e.mean for e in per_ut)
    std_error = float(np.sqrt(sum(e.std_error ** 2 for e in per_ut)))
    return McEstimate(mean, std_error, samples)


def fd_gradient(fn, x: np.ndarray, step: float) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        hi = fn(x + e)
        lo = fn(x - e)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise FloatingPointError(
                f"non-finite function value near coordinate {i}")
        grad[i] = (hi - lo) / (2.0 * step)
    return grad
