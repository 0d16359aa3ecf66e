"""Network specifications, the training engine and baselines."""

from .baselines import (RandomForestBaseline, RandomGuessClassifier, RandomSubsetSampler,
                        WindowFeatures, random_baseline, rf_baseline)
from .configs import TrainConfig, paper_train_config
from .estimators import (NetworkClassifier, TrainedModel, classify, fit_network, predict,
                         train)
from .specs import LayerSpec, ModelSpec, ctrnn_spec, model_spec, propagate_shapes, vgg11_1d_spec

__all__ = [
    "LayerSpec", "ModelSpec", "ctrnn_spec", "vgg11_1d_spec", "model_spec", "propagate_shapes",
    "TrainConfig", "paper_train_config",
    "NetworkClassifier", "TrainedModel", "train", "fit_network", "predict", "classify",
    "RandomForestBaseline", "RandomGuessClassifier", "RandomSubsetSampler", "WindowFeatures",
    "random_baseline", "rf_baseline",
]
