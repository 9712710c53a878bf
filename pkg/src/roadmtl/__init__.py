"""Road-area segmentation trained jointly with an auxiliary steering-angle task."""
from .backbone import Backbone, BackboneConfig, FeaturePyramid, extract_pyramid
from .losses import LossWeights, SourceLossBreakdown, TargetLossBreakdown
from .mti import ModelConfig, ModelOutputs, RoadMTLNet, model_forward

__version__ = "0.1.0"

__all__ = [
    "Backbone", "BackboneConfig", "FeaturePyramid", "extract_pyramid", "LossWeights",
    "SourceLossBreakdown", "TargetLossBreakdown", "ModelConfig", "ModelOutputs", "RoadMTLNet",
    "model_forward",
]
