"""GRU, LSTM and Transformer ToS / ping-pong predictors written directly in numpy."""

from .gradcheck import GradCheckReport, grad_check, grad_check_report
from .nets import attention_weights, backward_batch, encode, forward_batch, gru_hidden_states
from .params import MAGIC, ModelKind, PredictorParams, init_params, zero_params
from .training import (
    Adam,
    Batch,
    GridPoint,
    GridResult,
    GridRow,
    TrainConfig,
    TrainHistory,
    forward,
    grid_search,
    loss,
    loss_and_grad,
    predict,
    to_batch,
    train,
)

__all__ = [
    "Adam", "Batch", "GradCheckReport", "grad_check_report", "GridPoint", "GridResult", "GridRow", "MAGIC", "ModelKind",
    "PredictorParams", "TrainConfig", "TrainHistory", "attention_weights", "backward_batch",
    "encode", "forward", "forward_batch", "grad_check", "grid_search", "gru_hidden_states",
    "init_params", "loss", "loss_and_grad", "predict", "to_batch", "train", "zero_params",
]
