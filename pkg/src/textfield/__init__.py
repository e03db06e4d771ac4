"""Direction-field scene text detection without the network.

Ground-truth field generation, loss kernels, the morphological inference
pipeline and detection evaluation.
"""
from .evaluation import EvalReport, match_and_score
from .field_gen import DirectionField, FeatureTransform, feature_transform, generate_field, magnitude
from .geometry import Polygon, PolygonScene, mask_iou, rasterize
from .inference import InferenceConfig, PRESETS, detect
from .loss import compute_weights, per_pixel_loss, select_hard_negatives, total_loss
from .synth import NoiseModel, SynthSpec, generate_scene, perturb_field

__version__ = "0.1.0"

__all__ = [
    "DirectionField", "EvalReport", "FeatureTransform", "InferenceConfig", "NoiseModel",
    "PRESETS", "Polygon", "PolygonScene", "SynthSpec", "compute_weights", "detect",
    "feature_transform", "generate_field", "generate_scene", "magnitude", "mask_iou",
    "match_and_score", "per_pixel_loss", "perturb_field", "rasterize", "select_hard_negatives",
    "total_loss",
]
