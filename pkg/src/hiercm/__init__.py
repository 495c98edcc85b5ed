"""Toolkit for leveled latent-variable models: certify which discrete
concept combinations a model provably composes to, probe identifiability
conditions, recover level-to-level structure from samples, and run a
small diffusion-style training demo built on the same attention kernels.
"""

from .attention import (
    DEFAULT_SPARSITY_WEIGHT,
    AttentionStack,
    combined_loss,
    dice_overlap,
    grad_sparsity_loss,
    interpolate_attention,
    schedule,
    sparsity_loss,
)
from .composability import (
    ComposabilityReport,
    ComposabilityVerdict,
    cartesian_candidates,
    check_composability,
    enumerate_composable_space,
    sparsity_sweep,
)
from .identifiability import (
    MatchResult,
    check_conditional_independence,
    check_invertibility,
    check_sufficient_variability,
    log_density_derivatives,
    match_components,
)
from .model import (
    HierModel,
    MechanismSpec,
    ModelFormatError,
    RootConditional,
    ValidationReport,
    VariableId,
    load_model,
    loads_model,
    dumps_model,
    model_hash,
    save_model,
    validate,
)
from .sampling import SampleBatch, export_batch, import_batch, sample
from .structure import RecoveredGraph, recover_structure, score_graph
from .support import QuantizationGrid, SupportTable

__version__ = "0.1.0"
