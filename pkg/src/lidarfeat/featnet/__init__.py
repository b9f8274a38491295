"""Dense joint keypoint detector and descriptor for scan images."""
from .data import AugmentConfig, DatasetStats, ImageTensor, TrainSample, augment, crop_pair, normalize
from .objective import LossBreakdown, loss
from .network import (
    DenseFeatureMap,
    NetworkConfig,
    dense_maps,
    init_weights,
    load_weights,
    save_weights,
)
from .train import TrainConfig, TrainResult, train

__all__ = [
    "AugmentConfig", "DatasetStats", "ImageTensor", "TrainSample", "augment", "crop_pair",
    "normalize", "LossBreakdown", "loss", "DenseFeatureMap", "NetworkConfig", "dense_maps",
    "init_weights", "load_weights", "save_weights", "TrainConfig", "TrainResult", "train",
]
