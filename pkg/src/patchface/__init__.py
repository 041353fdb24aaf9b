"""patchface: patch-based RGB-D face identification.

Local 20x20 patches around detected keypoints are embedded by a small
convolutional network trained with a triplet loss, classified per patch
by sparse representation over a dynamically selected dictionary of
gallery embeddings, and fused across patches and modalities into an
identity decision.
"""

from .config import Config, ConfigError, parse_config
from .estimators import (
    PatchDescriptor,
    RGBDFaceIdentifier,
    SparseRepresentationClassifier,
    TripletEmbedder,
)
from .pipeline import (
    FaceSample,
    Keypoint,
    KeypointConfig,
    Patch,
    depth_preprocess,
    detect_keypoints,
    extract_patches,
    normalize_face,
    sample_to_patches,
)
from .sparse import (
    GalleryIndex,
    GalleryModality,
    IdentityDecision,
    SrcConfig,
    classify_patch,
    fuse_and_decide,
    identify,
    lasso_solve,
    select_dictionary,
)
from .synthetic import SyntheticSpec, generate_synthetic
from .triplet import PatchDataset, TrainConfig, Triplet, train, triplet_loss

__version__ = "0.1.0"

__all__ = [
    "Config",
    "ConfigError",
    "FaceSample",
    "GalleryIndex",
    "GalleryModality",
    "IdentityDecision",
    "Keypoint",
    "KeypointConfig",
    "Patch",
    "PatchDataset",
    "PatchDescriptor",
    "RGBDFaceIdentifier",
    "SparseRepresentationClassifier",
    "SrcConfig",
    "SyntheticSpec",
    "TrainConfig",
    "Triplet",
    "TripletEmbedder",
    "classify_patch",
    "depth_preprocess",
    "detect_keypoints",
    "extract_patches",
    "fuse_and_decide",
    "generate_synthetic",
    "identify",
    "lasso_solve",
    "normalize_face",
    "parse_config",
    "sample_to_patches",
    "select_dictionary",
    "train",
    "triplet_loss",
]
