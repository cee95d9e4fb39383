"""Link-level simulator and analytical toolkit for RIS-aided backscatter
communication with optimized APSK modulation."""

from .channel import ChannelParams, ChannelRealization, MomentSet
from .constellation import ApskConstellation, BitMap, RingSchedule
from .harness import ExperimentSpec, MisoSpec, SerPoint, run_sweep
from .transceiver import Hypothesis, ReceivedSample, SystemConfig

__version__ = "0.1.0"

__all__ = [
    "ApskConstellation",
    "BitMap",
    "ChannelParams",
    "ChannelRealization",
    "ExperimentSpec",
    "Hypothesis",
    "MisoSpec",
    "MomentSet",
    "ReceivedSample",
    "RingSchedule",
    "SerPoint",
    "SystemConfig",
    "run_sweep",
    "__version__",
]
