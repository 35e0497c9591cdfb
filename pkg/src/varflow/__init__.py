"""Differentiable variational inpainting of sparse optical flow.

Dense flow from sparse, confidence-weighted estimates by minimizing
weighted-Huber TV/TGV energies with unrolled FISTA, with exact
reverse-mode gradients of any loss on the solution w.r.t. every energy
input, at O(sqrt(K)) memory via checkpointed replay.  A matching
front-end (min-projected correlation volumes, quadratic sub-pixel
refinement, confidence features) produces the solver inputs from feature
maps.
"""

from . import backend
from .defaults import DEFAULTS
from .confidence import (
    ConfidenceFeatures,
    baseline_confidence,
    boundary_distance,
    confidence_features,
    edge_tensor,
    fwd_bwd_distance,
    loss_cor,
    nonmin_suppress,
)
from .diffops import (
    GradField,
    TgvStack,
    grad,
    grad_adj,
    huber,
    huber_field,
    spectral_norm,
    tgv_stack,
    tgv_stack_adj,
)
from .grid_io import (
    ConfidenceMap,
    DiffusionTensor,
    FlowField,
    ScalarMap,
    flow_to_png,
    read_flo,
    read_map,
    read_png_gray,
    write_flo,
    write_map,
)
from .matching import (
    CostVolume,
    FeatureMap,
    argmin_flow,
    correlate,
    prob_at_displacement,
    softmax_prob,
)
from .pyramid import PyramidConfig, downsample_inputs, solve_pyramid, upsample_flow
from .quadfit import (
    QuadFitResult,
    quadfit_backward,
    quadfit_refine,
    stencil_feature_grads,
)
from .tv import (
    CheckpointStore,
    SolverConfig,
    TvGradients,
    TvState,
    checkpoint_indices,
    fista_t_sequence,
    prox_data,
    tv_backward,
    tv_energy,
    tv_forward,
    tv_step,
)
from .tgv import (
    TgvGradients,
    TgvState,
    TgvWeights,
    tgv_backward,
    tgv_energy,
    tgv_forward,
    tgv_step,
)

__version__ = "0.1.0"
