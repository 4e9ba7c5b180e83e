"""Scenario configuration and unit conversions.

Everything inside the package works in SI units: positions in meters,
powers in watts, rates in nats. dBm/dB values appear only at the config
file and CLI boundary and are converted on load.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace


class ConfigError(ValueError):
    """Raised when a configuration violates a structural invariant."""


def dbm_to_watt(value_dbm: float) -> float:
    return 10.0 ** (value_dbm / 10.0) / 1000.0


def watt_to_dbm(value_w: float) -> float:
    if value_w <= 0:
        raise ConfigError("power must be positive to express in dBm")
    return 10.0 * math.log10(value_w * 1000.0)


def db_to_linear(value_db: float) -> float:
    return 10.0 ** (value_db / 10.0)


@dataclass(frozen=True)
class ScenarioConfig:
    """Physical and algorithmic parameters of one simulated downlink.

    Defaults reproduce the reference operating point: a 16-antenna base
    station serving four 4-antenna terminals at 3 GHz-ish wavelength with
    movable antennas confined to small square regions.
    """

    n_tx: int = 16                  # transmit antennas at the BS
    n_rx: int = 4                   # receive antennas per terminal
    n_users: int = 4
    streams: int = 4                # data streams per terminal
    wavelength: float = 0.1         # carrier wavelength [m]
    min_spacing: float = 0.05       # minimum antenna separation D [m]
    region_tx: float = 0.32         # transmit region side length [m]
    region_rx: float = 0.2          # receive region side length [m]
    amp_inefficiency: float = 5.0   # amplifier inefficiency factor
    p_max: float = 1.0              # transmit power budget [W]
    p_circuit: float = 1.0          # per-antenna circuit power [W]
    p_static: float = 10.0          # static overhead power [W]
    noise_power: float = 1e-11      # receiver noise power [W]
    paths_tx: int = 5               # propagation paths on the transmit side
    paths_rx: int = 5               # propagation paths on the receive side
    rician_k: float = 1.0           # LOS-to-NLOS power ratio
    ref_gain: float = 1e-4          # path gain at 1 m [linear]
    pathloss_exp: float = 2.8
    dist_min: float = 20.0          # terminal distance range [m]
    dist_max: float = 100.0
    # optimizer knobs
    delta_t: float = 0.02           # proximal curvature, transmit positions
    delta_r: float = 0.02           # proximal curvature, receive positions
    tau0: float = 1.0               # initial line-search step
    kappa: float = 0.2              # line-search backtracking factor
    xi: float = 0.02                # sufficient-increase control
    eps_stop: float = 1e-3          # increment threshold for termination
    ao_iters: int = 50              # outer alternating iterations
    de_iters: int = 20              # fixed-point sweeps per rate evaluation
    sca_iters_tx: int = 20          # inner iterations, transmit positions
    sca_iters_rx: int = 20          # inner iterations, receive positions

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        c = self
        if c.min_spacing < 0.5 * c.wavelength - 1e-12:
            raise ConfigError(
                f"min_spacing {c.min_spacing} must be >= half a wavelength "
                f"({0.5 * c.wavelength})")
        for name in ("n_tx", "n_rx", "n_users", "streams", "paths_tx",
                     "paths_rx", "ao_iters", "de_iters", "sca_iters_tx",
                     "sca_iters_rx"):
            if getattr(c, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        for name in ("wavelength", "p_max", "p_circuit", "p_static",
                     "noise_power", "ref_gain", "amp_inefficiency",
                     "delta_t", "delta_r", "eps_stop"):
            if getattr(c, name) <= 0:
                raise ConfigError(f"{name} must be strictly positive")
        if c.rician_k < 0:
            raise ConfigError("rician_k must be nonnegative")
        if not (0 < c.kappa < 1):
            raise ConfigError("kappa must lie in (0, 1)")
        if not (0 < c.xi < 1):
            raise ConfigError("xi must lie in (0, 1)")
        if not (0 < c.tau0 <= 1):
            raise ConfigError("tau0 must lie in (0, 1]")
        if not (0 < c.dist_min <= c.dist_max):
            raise ConfigError("need 0 < dist_min <= dist_max")
        if grid_capacity(c.region_tx, c.min_spacing) < c.n_tx:
            raise ConfigError(
                f"transmit region {c.region_tx} m cannot host {c.n_tx} "
                f"antennas at spacing {c.min_spacing} m")
        if grid_capacity(c.region_rx, c.min_spacing) < c.n_rx:
            raise ConfigError(
                f"receive region {c.region_rx} m cannot host {c.n_rx} "
                f"antennas at spacing {c.min_spacing} m")
        if math.isfinite(c.rician_k) and c.paths_tx < 2:
            raise ConfigError(
                "a finite Rician factor needs at least 2 paths (the NLOS "
                "gain would divide by zero)")

    def with_updates(self, **kwargs) -> "ScenarioConfig":
        """Return a validated copy with the given fields replaced."""
        return replace(self, **kwargs)


def grid_capacity(region: float, spacing: float) -> int:
    """Number of antennas a centered square grid at `spacing` can host."""
    per_side = int(math.floor(region / spacing + 1.0 + 1e-9))
    return per_side * per_side


# Config-file fields carrying dB/dBm values and their SI counterparts.
DBM_FIELDS = {
    "p_max_dbm": "p_max",
    "p_circuit_dbm": "p_circuit",
    "p_static_dbm": "p_static",
    "noise_power_dbm": "noise_power",
}
DB_FIELDS = {"ref_gain_db": "ref_gain"}


def scenario_from_dict(raw: dict) -> ScenarioConfig:
    """Build a ScenarioConfig from a parsed config mapping.

    Power fields may be given either in SI (`p_max`) or in dBm
    (`p_max_dbm`), the reference gain in linear or dB; unknown keys are
    rejected.
    """
    if not isinstance(raw, dict):
        raise ConfigError("scenario section must be a mapping")
    known = {f.name for f in fields(ScenarioConfig)}
    out = {}
    for key, value in raw.items():
        if key in DBM_FIELDS:
            target = DBM_FIELDS[key]
            if target in raw:
                raise ConfigError(f"give either {key} or {target}, not both")
            out[target] = dbm_to_watt(float(value))
        elif key in DB_FIELDS:
            target = DB_FIELDS[key]
            if target in raw:
                raise ConfigError(f"give either {key} or {target}, not both")
            out[target] = db_to_linear(float(value))
        elif key in known:
            out[key] = value
        else:
            raise ConfigError(f"unknown scenario field: {key!r}")
    try:
        return ScenarioConfig(**out)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
