"""Fine-grained CAM explanation engine for sequential CNNs."""

__version__ = "0.1.0"

from .cam_backends import (CamWeights, Explanation, RelevanceStack,
                           cam_explanation, explanation_components,
                           gradcam_weights, layercam_explanation,
                           scorecam_weights)
from .denoise import SvdResult, denoise_components, svd_small
from .errors import (FgcamError, ModelFormatError, ShapeError,
                     UnknownLayerError, UnsupportedStructureError)
from .grad_engine import GradientRequest, backward_class_gradient
from .model_graph import (ActivationTrace, LayerSpec, ModelGraph,
                          fold_batchnorm, forward_logits, forward_trace,
                          load_model, save_model, validate_model)
from .relprop import (InputDomain, domain_from_model, fg_cam_explain,
                      improve_resolution, lrp_explain, maxpool_route,
                      zbeta_input, zplus_layer)

__all__ = [
    "ActivationTrace", "CamWeights", "Explanation", "FgcamError",
    "GradientRequest", "InputDomain", "LayerSpec", "ModelFormatError",
    "ModelGraph", "RelevanceStack", "ShapeError", "SvdResult",
    "UnknownLayerError", "UnsupportedStructureError",
    "backward_class_gradient", "cam_explanation", "denoise_components",
    "domain_from_model", "explanation_components", "fg_cam_explain",
    "fold_batchnorm", "forward_logits", "forward_trace", "gradcam_weights",
    "improve_resolution", "layercam_explanation", "load_model", "lrp_explain",
    "maxpool_route", "save_model", "scorecam_weights", "svd_small",
    "validate_model", "zbeta_input", "zplus_layer",
]
