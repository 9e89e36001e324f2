from .augment import AugmentParams, AugmentRanges, ThinPlateSpline, augment, sample_params
from .davis import load_davis_layout, load_video, write_davis_layout, write_masks
from .samples import make_static_pair, sample_training_triplet
from .synth import SynthConfig, generate_synthetic_video, synthetic_dataset
from .types import DataError, TrainingSample, VideoSequence

__all__ = [
    "AugmentParams", "AugmentRanges", "ThinPlateSpline", "augment", "sample_params",
    "load_davis_layout", "load_video", "write_davis_layout", "write_masks",
    "make_static_pair", "sample_training_triplet",
    "SynthConfig", "generate_synthetic_video", "synthetic_dataset",
    "DataError", "TrainingSample", "VideoSequence",
]
