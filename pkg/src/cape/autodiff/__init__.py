from . import ops
from .optim import SGDMomentum, sgd_momentum_step
from .tensor import Tensor, backward, no_grad, parameter

__all__ = ["Tensor", "backward", "parameter", "no_grad", "ops", "SGDMomentum", "sgd_momentum_step"]
