"""GGIW-PMBM filter for multiple extended object tracking."""

from ggiw_pmbm.ggiw import GGIWParams, MotionModel, SensorModel, WeightedGGIW
from ggiw_pmbm.pmbm import (
    Association,
    BernoulliTrack,
    GlobalHypothesis,
    PMBMDensity,
    PPPIntensity,
)

__all__ = [
    "Association",
    "BernoulliTrack",
    "GGIWParams",
    "GlobalHypothesis",
    "MotionModel",
    "PMBMDensity",
    "PPPIntensity",
    "SensorModel",
    "WeightedGGIW",
]

__version__ = "0.1.0"
