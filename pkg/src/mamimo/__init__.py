"""Energy-efficiency optimization for movable-antenna MIMO downlinks."""

from .config import ScenarioConfig, ConfigError
from .channel import (Apv, ChannelStatistics, PathAngles, centered_grid,
                      channel_matrix, field_matrix, field_response,
                      sample_scenario)
from .precoder import PowerModel, PrecoderSet, total_power

__all__ = [
    "ScenarioConfig", "ConfigError", "Apv", "ChannelStatistics",
    "PathAngles", "centered_grid", "channel_matrix", "field_matrix",
    "field_response", "sample_scenario", "PowerModel", "PrecoderSet",
    "total_power",
]
