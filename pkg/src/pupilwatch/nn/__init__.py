from .model import (Architecture, Hyperparams, ModelParameters, PredictionPair, backward_gradients,
                    composite_loss, forward, forward_batch, init_params, loss_and_gradients,
                    predict_proba, predict_recon)
from .persist import load_weights, save_weights
from .training import TrainReport, train

__all__ = [
    "Architecture", "Hyperparams", "ModelParameters", "PredictionPair", "TrainReport",
    "backward_gradients", "composite_loss", "forward", "forward_batch", "init_params",
    "load_weights", "loss_and_gradients", "predict_proba", "predict_recon", "save_weights", "train",
]
