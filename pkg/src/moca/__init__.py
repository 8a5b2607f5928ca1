"""Desk-scale identity-conditioned video diffusion with verified gradients.

The package is organized around six concerns: a numpy-backed autodiff
tensor core (:mod:`moca.tensor`, :mod:`moca.rng`, :mod:`moca.tensor_io`,
:mod:`moca.gradcheck`), identity conditioning (:mod:`moca.identity`), the
mixture-of-cross-attention layer (:mod:`moca.layers`), the transformer
backbone (:mod:`moca.model`), the diffusion process and training objective
(:mod:`moca.diffusion`, :mod:`moca.optim`, :mod:`moca.sampling`), and the
verification harness (:mod:`moca.suites`, :mod:`moca.cli`).
"""

from .config import RunConfig, micro_config, toy_overfit_config
from .diffusion import (
    DiffusionSchedule,
    LossWeights,
    back_loss,
    cosine_weight,
    diffusion_loss,
    face_loss,
    forward_diffuse,
    interpolate_mask,
    make_schedule,
    perceptual_loss,
    predict_z0,
    total_loss,
)
from .gradcheck import finite_diff_grad
from .identity import (
    FacePool,
    IdentityEmbedding,
    QFormerLiteParams,
    concat_global,
    qformer_lite,
    sample_reference,
    synth_encoders,
)
from .layers import (
    MocaParams,
    TokenLayout,
    branch_attention,
    htp_pool,
    htp_unpool,
    moca_forward,
    router_gates,
)
from .model import ModelConfig, ModelParams, model_forward
from .rng import Rng
from .sampling import sample_ancestral
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tensor,
    backward,
    matmul,
    scaled_dot_attention,
    set_precision,
    softmax_rows,
)
from .tensor_io import TensorFormatError, load_tensor, save_tensor

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "micro_config",
    "toy_overfit_config",
    "DiffusionSchedule",
    "LossWeights",
    "back_loss",
    "cosine_weight",
    "diffusion_loss",
    "face_loss",
    "forward_diffuse",
    "interpolate_mask",
    "make_schedule",
    "perceptual_loss",
    "predict_z0",
    "total_loss",
    "finite_diff_grad",
    "FacePool",
    "IdentityEmbedding",
    "QFormerLiteParams",
    "concat_global",
    "qformer_lite",
    "sample_reference",
    "synth_encoders",
    "MocaParams",
    "TokenLayout",
    "branch_attention",
    "htp_pool",
    "htp_unpool",
    "moca_forward",
    "router_gates",
    "ModelConfig",
    "ModelParams",
    "model_forward",
    "Rng",
    "sample_ancestral",
    "NonFiniteError",
    "ShapeError",
    "Tensor",
    "backward",
    "matmul",
    "scaled_dot_attention",
    "set_precision",
    "softmax_rows",
    "TensorFormatError",
    "load_tensor",
    "save_tensor",
    "__version__",
]
