"""Differentially private image perturbation in the blockwise-DCT
frequency domain, with learnable per-element privacy budgets."""

from .bdct import (
    FrequencyTensor,
    dct8_forward,
    dct8_inverse,
    detensorize,
    energy_profile,
    extract_dc,
    insert_dc,
    remove_dc,
    tensorize,
)
from .dp import (
    BudgetAllocation,
    SensitivityMap,
    allocate_budgets,
    calibrate_sensitivity,
    derive_rng,
    element_distance,
    laplace_sample,
    perturb,
    tensor_distance,
    verify_dp_bound,
)
from .image_io import RgbImage, YcbcrImage, load_image, save_image
from .pipeline import image_to_tensor, tensor_to_image
from .recognizer import ToyRecognizer, TrainConfig, train_budgets

__all__ = [
    "FrequencyTensor",
    "RgbImage",
    "YcbcrImage",
    "SensitivityMap",
    "BudgetAllocation",
    "ToyRecognizer",
    "TrainConfig",
    "allocate_budgets",
    "calibrate_sensitivity",
    "dct8_forward",
    "dct8_inverse",
    "derive_rng",
    "detensorize",
    "element_distance",
    "energy_profile",
    "extract_dc",
    "image_to_tensor",
    "insert_dc",
    "laplace_sample",
    "load_image",
    "perturb",
    "remove_dc",
    "save_image",
    "tensor_distance",
    "tensor_to_image",
    "tensorize",
    "train_budgets",
    "verify_dp_bound",
]

__version__ = "0.1.0"
