"""Offline-to-online RL lab: networks, environments, TD3 agents, fine-tuning and regime statistics."""

from ._o2o import *  # noqa: F401,F403
from ._o2o import __version__  # noqa: F401
