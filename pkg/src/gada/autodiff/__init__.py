from .checkpoint import CheckpointError, read_checkpoint, write_checkpoint
from .gradcheck import finite_diff_check
from .nn import Affine, BatchNormParams, TwoLayerMLP, batch_norm
from .optim import OptState, sgd_step
from .tensor import (
    Parameter,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    clamped_log,
    clip,
    concat,
    div,
    elementwise_mul,
    exp,
    gather,
    getitem,
    grad_reverse,
    log,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    softmax,
    sub,
    transpose,
    tsum,
    zero_grad,
)
