"""Acoustic scene classification with a convolutional-recurrent network, spatio-temporal
attention pooling, between-class training, SVM calibration and multiplicative fusion."""

from .calibrate import SvmModel, svm_predict_proba, train_svm
from .dsp import AudioClip, FeatureConfig, feature_config, recording_inputs
from .infer import RecordingPrediction, classify_recording, fuse_models, fuse_multiplicative
from .layers import ModelConfig
from .model import AttCRNN, CNNBaseline, build_model, load_model
from .train import TrainConfig, kl_loss, train

__version__ = "0.1.0"

__all__ = [
    "AttCRNN", "AudioClip", "CNNBaseline", "FeatureConfig", "ModelConfig", "RecordingPrediction", "SvmModel",
    "TrainConfig", "build_model", "classify_recording", "feature_config", "fuse_models", "fuse_multiplicative",
    "kl_loss", "load_model", "recording_inputs", "svm_predict_proba", "train", "train_svm",
]
