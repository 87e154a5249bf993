"""Desk-scale lab for the robust global contrastive loss with swappable
normalizer estimators: exact oracle, fresh mini-batch values, per-sample
moving averages, and a learned log-normalizer predictor trained by an
alternating scheme.  Every approximation is checkable against brute force."""

from .config import RunConfig, load_config
from .data import PairDataset, SyntheticSpec, gen_synthetic
from .encoders import EmbeddingBatch, EncoderParams, encode, encode_backward, init_encoder
from .estimators import (
    EmaState,
    TabularAlpha,
    ema_update,
    estimation_error,
    minibatch_normalizers,
    mirror_descent_update,
    oracle_normalizers,
)
from .npn import (
    NpnParams,
    alpha_jacobians,
    init_npn,
    npn_forward,
    npn_grad,
    npn_multi_update,
    npn_restart,
)
from .numerics import Rng, cosine, finite_diff_grad, grad_rel_error, log_sum_exp_mean
from .objective import (
    GclConfig,
    LossReport,
    conjugate_argmin,
    conjugate_inner,
    g_values,
    gcl_grad_exact,
    gcl_value,
    unified_grad,
    unified_value,
)
from .trainers import (
    OptimizerState,
    TrainState,
    adagrad_step,
    adamw_step,
    make_optimizer,
    optimizer_step,
    sgd_step,
    step_fastclip,
    step_minibatch,
    step_neuclip,
    step_simultaneous,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
