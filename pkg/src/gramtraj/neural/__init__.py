from .model import Model, ModelConfig, NonFiniteActivationError, build_model, forward_loss, mean_nll
from .train import Adam, TrainConfig, load_checkpoint, run_training, save_checkpoint, train_step
from .gradcheck import gradient_check

__all__ = [
    "Adam",
    "Model",
    "ModelConfig",
    "NonFiniteActivationError",
    "TrainConfig",
    "build_model",
    "forward_loss",
    "gradient_check",
    "load_checkpoint",
    "mean_nll",
    "run_training",
    "save_checkpoint",
    "train_step",
]
