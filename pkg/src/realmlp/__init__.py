"""RealMLP: a tuned-default MLP for tabular data, built on a small numpy autodiff."""

from realmlp.config import RealMLPConfig, preset
from realmlp.dataio import Dataset, DatasetSchema, SplitIndices, load_csv, make_split
from realmlp.train import TrainedModel, TrainRecord, predict, train

__all__ = [
    "Dataset",
    "DatasetSchema",
    "RealMLPConfig",
    "SplitIndices",
    "TrainRecord",
    "TrainedModel",
    "load_csv",
    "make_split",
    "predict",
    "train",
    "preset",
]

__version__ = "0.1.0"
