"""Energy-aware task scheduling for UAV-assisted mobile edge computing with
IRS-aided uplinks: world model, channel model, UAV placement, a numpy
multi-task agent with progressive growth, taboo/annealing search and the
online training loop."""

from .channel import ChannelSet, build_channel_set
from .env import PhysicalConstants, Scenario, ScenarioConfig, Schedule, generate_scenario, total_energy
from .errors import FresError
from .runtime import EpisodeConfig, run_baseline, run_episode

__version__ = "0.1.0"

__all__ = [
    "ChannelSet",
    "EpisodeConfig",
    "FresError",
    "PhysicalConstants",
    "Scenario",
    "ScenarioConfig",
    "Schedule",
    "build_channel_set",
    "generate_scenario",
    "run_baseline",
    "run_episode",
    "total_energy",
]
