from .functional import cross_entropy, mse, one_hot, soft_cross_entropy
from .gradcheck import (
    NonDeterministicError,
    check_params,
    finite_diff_check,
    relative_error,
)
from .linalg import LstsqResult, least_squares_solve
from .tensor import (
    GradientError,
    NumericError,
    ShapeError,
    Tensor,
    add,
    add_scalar,
    backward,
    broadcast_to,
    concat,
    default_dtype,
    exp,
    gelu,
    getitem,
    grad_enabled,
    layer_norm,
    linear,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    precision,
    reshape,
    scale,
    set_default_dtype,
    softmax,
    square,
    sub,
    sum_,
    swapaxes,
    tanh,
    transpose,
)
