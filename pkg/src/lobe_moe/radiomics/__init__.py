"""First-order, shape and texture-matrix features over masked regions."""

from .discretize import DEFAULT_BIN_WIDTH, DiscretizedRegion, discretize, discretize_voxels
from .extract import extract_cohort, extract_features, features_from_region
from .first_order import first_order_features
from .schema import FEATURE_NAMES, SCHEMA_ID, FeatureVector, schema_lines
from .shape import shape_features
from .texture import (TextureMatrix, glcm_features, glcm_matrix, gldm_features, gldm_matrix,
                      glrlm_features, glrlm_matrix, glszm_features, glszm_matrix, ngtdm_features,
                      ngtdm_matrix)

__all__ = [
    "DEFAULT_BIN_WIDTH", "DiscretizedRegion", "discretize", "discretize_voxels",
    "extract_cohort", "extract_features", "features_from_region", "first_order_features",
    "FEATURE_NAMES", "SCHEMA_ID", "FeatureVector", "schema_lines", "shape_features",
    "TextureMatrix", "glcm_features", "glcm_matrix", "gldm_features", "gldm_matrix",
    "glrlm_features", "glrlm_matrix", "glszm_features", "glszm_matrix", "ngtdm_features",
    "ngtdm_matrix",
]
