"""Minimal differentiable-network stack on plain numpy.

Float64 forward/backward with hand-written gradients; checkpoints store
float32. No autograd, no GPU, no hidden RNG in forward passes.
"""

from .blocks import (MLP, ConvEncoder, PointEncoder, TransformerEncoder,
                     sinusoidal_embedding)
from .checkpoint import (Checkpoint, load_checkpoint, save_checkpoint,
                         spec_digest)
from .gradcheck import GradCheckReport, check_block, grad_check
from .layers import (attention_backward, attention_forward, conv2d_backward,
                     conv2d_forward, layernorm_backward, layernorm_forward,
                     linear_backward, linear_forward, softmax)
from .params import Adam, ParamStore

__all__ = [
    "Adam", "Checkpoint", "ConvEncoder", "GradCheckReport", "MLP",
    "ParamStore", "PointEncoder", "TransformerEncoder",
    "attention_backward", "attention_forward", "check_block",
    "conv2d_backward", "conv2d_forward", "grad_check", "layernorm_backward",
    "layernorm_forward", "linear_backward", "linear_forward",
    "load_checkpoint", "save_checkpoint", "sinusoidal_embedding", "softmax",
    "spec_digest",
]
