"""Single-image dehazing with cross-dataset gamma alignment and a strong/weak
self-supervised consistency term, on a from-scratch numpy autodiff core."""
from .imgdata import Dataset, Image, Pair, load_dataset, load_image, save_dataset, save_image
from .kernels import BACKEND
from .rng import Rng

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Dataset",
    "Image",
    "Pair",
    "Rng",
    "load_dataset",
    "load_image",
    "save_dataset",
    "save_image",
]
