"""Digital-twin synchronization over a resource-block-limited uplink."""
from .channel import ChannelParams
from .env import Observation, StepOutcome, TwinEnv
from .kernels import BACKEND
from .traces import DeviceProfile, PhysicalTrace

__version__ = "0.1.0"

__all__ = ["BACKEND", "ChannelParams", "DeviceProfile", "Observation", "PhysicalTrace",
           "StepOutcome", "TwinEnv", "__version__"]
