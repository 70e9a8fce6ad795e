from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import finite_diff_check, gradient_errors
from .optim import AdamState, adam_step, clip_grad_norm
from .params import ParamSpec, ParamStore, init_params
from .rng import Rng, stable_hash
from .tensor import OP_KINDS, Tensor, apply, no_grad

__all__ = [
    "AdamState", "OP_KINDS", "ParamSpec", "ParamStore", "Rng", "Tensor",
    "adam_step", "apply", "clip_grad_norm", "finite_diff_check", "gradient_errors", "init_params",
    "load_checkpoint", "no_grad", "save_checkpoint", "stable_hash",
]
