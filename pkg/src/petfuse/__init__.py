"""PET/CT lesion segmentation pipeline toolkit.

Core building blocks: volume types and I/O, inference-time preprocessing,
3D connected components, maximum intensity projections with brain removal,
a classifier gate with OR-fusion, sliding-window inference and late fusion,
prediction post-processing, evaluation metrics, and grouped stratified
cross-validation splits. A FastAPI service and a thin CLI expose the same
operations over file paths.
"""

__version__ = "0.1.0"

from .errors import ConfigError, ContractError, DataFormatError, PetfuseError
from .volume import BinaryMask, ProbabilityVolume, Volume3D, load_nifti, load_volume, save_volume

__all__ = [
    "BinaryMask",
    "ConfigError",
    "ContractError",
    "DataFormatError",
    "PetfuseError",
    "ProbabilityVolume",
    "Volume3D",
    "load_nifti",
    "load_volume",
    "save_volume",
    "__version__",
]
