"""Conv-LSTM model core with swappable compute kernels."""

from .backend import active_backend, available_backends, get_kernels
from .gradcheck import GradCheckReport, gradient_check
from .model import (
    Architecture,
    ClnModel,
    LstmLayerParams,
    LstmState,
    batch_cross_entropy,
    cross_entropy,
    flatten_depth,
    init_model,
    lstm_step,
    model_backward,
    model_forward,
    model_loss_and_grads,
    param_shapes,
    predict,
    predict_proba,
    rebuild_head,
    softmax,
    tanh_activation,
    unflatten_depth,
)
