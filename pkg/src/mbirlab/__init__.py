"""mbirlab: desk-scale model-based image reconstruction laboratory."""

from .core import (Image, LinearOperator, SvdResult, Trace, cg_solve,
                   compose, dot_test, hard_threshold, identity_operator,
                   matrix_operator, operator_norm_sq, soft_threshold, svd)
from .errors import (ConfigError, FormatError, NumericalBreakdownError,
                     ShapeError)
from .patches import (PatchConfig, assemble_patches, coverage_counts,
                      extract_patches, patch_count, scatter_patches)

__version__ = "0.1.0"
