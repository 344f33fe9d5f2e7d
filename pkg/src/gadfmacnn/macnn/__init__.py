from .layers import (conv_forward, eca_apply, eca_kernel_size, instance_norm, max_pool,
                     relu, se_block, softmax)
from .model import MACNN, MacnnConfig, count_parameters, macnn_forward
from .train import (ClassifierCheckpoint, TrainConfig, load_classifier, predict,
                    save_classifier, train_classifier)

__all__ = [
    "conv_forward", "eca_apply", "eca_kernel_size", "instance_norm", "max_pool", "relu", "se_block",
    "softmax", "MACNN", "MacnnConfig", "count_parameters", "macnn_forward", "ClassifierCheckpoint",
    "TrainConfig", "load_classifier", "predict", "save_classifier", "train_classifier",
]
