"""Generate synthetic CAN attack frames with a Bernoulli RBM and measure what they add to an intrusion detector."""

from .codec import AttackType, BitVector, CanFrame, EncodedDataset, GeneratedFrame, Mode, parse_hcrl_csv, preprocess
from .generator import GenerationConfig, OutputMode, generate_frames
from .rbm import RbmModel, TrainConfig, init_rbm, load_model, save_model, train_cd

__version__ = "0.1.0"

__all__ = [
    "AttackType", "BitVector", "CanFrame", "EncodedDataset", "GeneratedFrame", "GenerationConfig", "Mode",
    "OutputMode", "RbmModel", "TrainConfig", "generate_frames", "init_rbm", "load_model", "parse_hcrl_csv",
    "preprocess", "save_model", "train_cd",
]
