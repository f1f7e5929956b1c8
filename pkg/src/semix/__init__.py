"""semix: a lab for mixup-style training with a representation equivariance penalty.

The package is organized as:

    autodiff    float32 tensors + reverse-mode tape
    models      extractor/head split, small mlp and cnn
    mixing      Beta sampling, mixup, CutMix, representation mixing
    training    the combined loss and the training loop
    evaluation  accuracy, corruptions, MSP/AUROC, equivariance gap, PCA
    datasets    IDX / CIFAR readers, synthetic shapes, stratified split
    checkpoint  binary model snapshot format
    config      flat key = value run configs
    cli         the `semix` command
"""

from .autodiff import Tape, Tensor, backward
from .datasets import Dataset, read_cifar_binary, read_idx, synth_shapes
from .evaluation import CorruptionSpec, GapCurve, auroc, equivariance_gap, msp_scores
from .mixing import MixedBatch, MixPolicy, make_mixed_batch, sample_lambda
from .models import ForwardOutput, ModelSpec, forward, small_cnn, small_mlp
from .training import MetricsRecord, SemConfig, TrainConfig, sem_loss, train

__version__ = "0.1.0"

__all__ = [
    "Tape", "Tensor", "backward",
    "Dataset", "read_cifar_binary", "read_idx", "synth_shapes",
    "CorruptionSpec", "GapCurve", "auroc", "equivariance_gap", "msp_scores",
    "MixedBatch", "MixPolicy", "make_mixed_batch", "sample_lambda",
    "ForwardOutput", "ModelSpec", "forward", "small_cnn", "small_mlp",
    "MetricsRecord", "SemConfig", "TrainConfig", "sem_loss", "train",
    "__version__",
]
