"""Decentralized task offloading in mobile edge computing as a multi-player bandit."""
from .env import HETEROGENEOUS, HOMOGENEOUS, MECEnvironment, RewardModel, ServerProfile, UserProfile
from .errors import (ConfigError, DegenerateInstanceError, InfeasibleError, InstanceTooLargeError,
                     MECBanditError, SimulationError)
from .trace import EpochRecord, RunTrace

__version__ = "0.1.0"

__all__ = [
    "HETEROGENEOUS", "HOMOGENEOUS", "MECEnvironment", "RewardModel", "ServerProfile", "UserProfile",
    "ConfigError", "DegenerateInstanceError", "InfeasibleError", "InstanceTooLargeError",
    "MECBanditError", "SimulationError", "EpochRecord", "RunTrace",
]
