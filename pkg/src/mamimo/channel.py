"""Far-field geometry, channel-matrix synthesis, and scenario sampling.

The channel between the base station and a terminal factors into a
receive-side field-response matrix, a path-response matrix coupling
transmit and receive path directions, and a transmit-side field-response
matrix. Antenna positions enter only through per-path phase shifts, so
moving an antenna re-weights the same static path statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .config import ScenarioConfig
from ._linalg import herm

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PathAngles:
    """Elevation/azimuth angles (radians) of every propagation path."""

    theta_tx: np.ndarray
    phi_tx: np.ndarray
    theta_rx: np.ndarray
    phi_rx: np.ndarray

    def __post_init__(self):
        for name in ("theta_tx", "phi_tx", "theta_rx", "phi_rx"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
            if arr.ndim != 1:
                raise ValueError(f"{name} must be a 1-D array")
            if np.any(arr < -1e-12) or np.any(arr > math.pi + 1e-12):
                raise ValueError(f"{name} entries must lie in [0, pi]")
        if self.theta_tx.shape != self.phi_tx.shape:
            raise ValueError("transmit angle arrays must match in length")
        if self.theta_rx.shape != self.phi_rx.shape:
            raise ValueError("receive angle arrays must match in length")

    @property
    def paths_tx(self) -> int:
        return self.theta_tx.size

    @property
    def paths_rx(self) -> int:
        return self.theta_rx.size


@dataclass(frozen=True)
class ChannelStatistics:
    """Per-terminal statistical CSI.

    ``los_response`` holds the deterministic line-of-sight path gains and
    ``nlos_mask`` the entrywise standard deviations of the random
    scattered components; both are indexed (receive path, transmit path).
    """

    los_response: np.ndarray    # complex (L_r, L_t)
    nlos_mask: np.ndarray       # real nonnegative (L_r, L_t)
    angles: PathAngles
    gain: float
    distance: float

    def __post_init__(self):
        los = np.asarray(self.los_response, dtype=complex)
        mask = np.asarray(self.nlos_mask, dtype=float)
        object.__setattr__(self, "los_response", los)
        object.__setattr__(self, "nlos_mask", mask)
        if los.shape != mask.shape:
            raise ValueError("los_response and nlos_mask shapes differ")
        expected = (self.angles.paths_rx, self.angles.paths_tx)
        if los.shape != expected:
            raise ValueError(
                f"path-response shape {los.shape} does not match the "
                f"angle counts {expected}")
        if np.any(mask < 0):
            raise ValueError("nlos_mask must be entrywise nonnegative")

    def los_only(self) -> "ChannelStatistics":
        """Copy with the scattered components removed."""
        return replace(self, nlos_mask=np.zeros_like(self.nlos_mask))


@dataclass(frozen=True)
class Apv:
    """Antenna position vector for one array inside a square region."""

    x: np.ndarray
    y: np.ndarray
    region: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if x.shape != y.shape or x.ndim != 1:
            raise ValueError("x and y must be 1-D arrays of equal length")

    @property
    def count(self) -> int:
        return self.x.size

    def as_vector(self) -> np.ndarray:
        """Stacked real coordinates (x_1..x_n, y_1..y_n)."""
        return np.concatenate([self.x, self.y])

    def with_vector(self, vec: np.ndarray) -> "Apv":
        n = self.count
        return Apv(vec[:n].copy(), vec[n:].copy(), self.region)

    def positions(self) -> np.ndarray:
        """(n, 2) array of antenna coordinates."""
        return np.stack([self.x, self.y], axis=1)

    def min_pairwise_distance(self) -> float:
        if self.count < 2:
            return math.inf
        pos = self.positions()
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.sqrt((diff ** 2).sum(axis=-1))
        iu = np.triu_indices(self.count, k=1)
        return float(dist[iu].min())

    def in_box(self, slack: float = 1e-12) -> bool:
        lo, hi = -slack, self.region + slack
        return bool(np.all(self.x >= lo) and np.all(self.x <= hi)
                    and np.all(self.y >= lo) and np.all(self.y <= hi))

    def is_feasible(self, spacing: float, slack: float = 1e-12) -> bool:
        return self.in_box(slack) and (
            self.min_pairwise_distance() >= spacing - slack)


def field_response(x: float, y: float, theta: np.ndarray, phi: np.ndarray,
                   wavelength: float) -> np.ndarray:
    """Unit-modulus phase vector of a single antenna across all paths.

    Entry l carries the phase advance of the extra propagation distance
    x*sin(theta_l)*cos(phi_l) + y*cos(theta_l) relative to the region
    origin.
    """
    rho = x * np.sin(theta) * np.cos(phi) + y * np.cos(theta)
    return np.exp(1j * TWO_PI / wavelength * rho)


def field_matrix(apv: Apv, theta: np.ndarray, phi: np.ndarray,
                 wavelength: float) -> np.ndarray:
    """(paths, antennas) field-response matrix; column n belongs to antenna n."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if theta.shape != phi.shape:
        raise ValueError("theta and phi must have matching shapes")
    rho = (np.outer(np.sin(theta) * np.cos(phi), apv.x)
           + np.outer(np.cos(theta), apv.y))
    return np.exp(1j * TWO_PI / wavelength * rho)


def tx_field_matrix(apv: Apv, stats: ChannelStatistics,
                    wavelength: float) -> np.ndarray:
    return field_matrix(apv, stats.angles.theta_tx, stats.angles.phi_tx,
                        wavelength)


def rx_field_matrix(apv: Apv, stats: ChannelStatistics,
                    wavelength: float) -> np.ndarray:
    return field_matrix(apv, stats.angles.theta_rx, stats.angles.phi_rx,
                        wavelength)


def channel_matrix(t: Apv, r: Apv, path_response: np.ndarray,
                   angles: PathAngles, wavelength: float) -> np.ndarray:
    """Synthesize the (n_rx, n_tx) channel F^H * Sigma * G."""
    path_response = np.asarray(path_response, dtype=complex)
    if path_response.shape != (angles.paths_rx, angles.paths_tx):
        raise ValueError("path_response shape does not match the angles")
    g = field_matrix(t, angles.theta_tx, angles.phi_tx, wavelength)
    f = field_matrix(r, angles.theta_rx, angles.phi_rx, wavelength)
    return herm(f) @ path_response @ g


def sample_azimuth(rng: np.random.Generator, size: int) -> np.ndarray:
    """Azimuth draws with density sin(phi)/2 on [0, pi] (inverse CDF)."""
    return np.arccos(1.0 - 2.0 * rng.random(size))


def sample_path_angles(paths_tx: int, paths_rx: int,
                       rng: np.random.Generator) -> PathAngles:
    theta_tx = rng.uniform(0.0, math.pi, paths_tx)
    phi_tx = sample_azimuth(rng, paths_tx)
    theta_rx = rng.uniform(0.0, math.pi, paths_rx)
    phi_rx = sample_azimuth(rng, paths_rx)
    return PathAngles(theta_tx, phi_tx, theta_rx, phi_rx)


def sample_scenario(config: ScenarioConfig, rng) -> list[ChannelStatistics]:
    """Draw per-terminal statistics: distance, path angles, and gains.

    The line-of-sight component sits on the first transmit/receive path
    pair; the remaining power is spread evenly over the diagonal scattered
    paths. With an infinite Rician factor the scattered part vanishes.
    """
    rng = np.random.default_rng(rng)
    c = config
    if math.isfinite(c.rician_k):
        n_nlos = min(c.paths_tx, c.paths_rx) - 1
        if n_nlos < 1:
            raise ValueError("need at least 2 paths for a finite Rician factor")
    stats = []
    for _ in range(c.n_users):
        d = rng.uniform(c.dist_min, c.dist_max)
        gain = c.ref_gain * d ** (-c.pathloss_exp)
        angles = sample_path_angles(c.paths_tx, c.paths_rx, rng)
        los = np.zeros((c.paths_rx, c.paths_tx), dtype=complex)
        mask = np.zeros((c.paths_rx, c.paths_tx), dtype=float)
        if math.isinf(c.rician_k):
            los[0, 0] = math.sqrt(gain)
        else:
            kr = c.rician_k
            los[0, 0] = math.sqrt(gain * kr / (kr + 1.0))
            level = math.sqrt(gain / (n_nlos * (kr + 1.0)))
            for l in range(1, n_nlos + 1):
                mask[l, l] = level
        stats.append(ChannelStatistics(los, mask, angles, gain, d))
    return stats


def centered_grid(count: int, spacing: float, region: float) -> Apv:
    """Square grid of `count` positions at `spacing`, centered in the region.

    Positions fill row-major; the last row may be partial. Raises if the
    grid does not fit inside the region.
    """
    side = math.ceil(math.sqrt(count))
    rows = math.ceil(count / side)
    span_x = (side - 1) * spacing
    span_y = (rows - 1) * spacing
    if span_x > region + 1e-12 or span_y > region + 1e-12:
        raise ValueError(
            f"a {rows}x{side} grid at spacing {spacing} does not fit in a "
            f"region of side {region}")
    x0 = 0.5 * (region - span_x)
    y0 = 0.5 * (region - span_y)
    xs, ys = [], []
    for idx in range(count):
        i, j = divmod(idx, side)
        xs.append(x0 + j * spacing)
        ys.append(y0 + i * spacing)
    return Apv(np.array(xs), np.array(ys), region)
