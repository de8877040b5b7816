"""From-scratch two-head classifier: layers, assembly, and training."""

from nlosid.ann.layers import (Conv1d, Dense, Flatten, Relu, cross_entropy,
                               dense_forward, softmax)
from nlosid.ann.network import (LayerSpec, NetworkFormatError, TwoHeadNetwork,
                                build_network, default_architecture,
                                load_network, reduced_architecture,
                                save_network)
from nlosid.ann.train import (EpochStats, TrainConfig, TrainingDiverged,
                              loss_table_csv, train)

__all__ = [
    "Conv1d", "Dense", "Flatten", "Relu", "cross_entropy", "dense_forward",
    "softmax", "LayerSpec", "NetworkFormatError", "TwoHeadNetwork",
    "build_network", "default_architecture", "load_network",
    "reduced_architecture", "save_network", "EpochStats", "TrainConfig",
    "TrainingDiverged", "loss_table_csv", "train",
]
