"""cloudpaint: 360° LiDAR point-cloud colourisation from a multi-camera
ring — targetless extrinsic calibration, colour correction, frame
synchronisation, low-light enhancement and real-time colour fusion,
validated against a synthetic ground-truth simulator."""

__version__ = "0.1.0"

from .errors import (
    CloudpaintError,
    ConfigurationError,
    DataError,
    NumericalError,
)
from .geometry import (
    CameraIntrinsics,
    DistortionCoefficients,
    Image,
    PointCloud,
    RigidTransform,
)

__all__ = [
    "__version__",
    "CloudpaintError",
    "ConfigurationError",
    "DataError",
    "NumericalError",
    "CameraIntrinsics",
    "DistortionCoefficients",
    "Image",
    "PointCloud",
    "RigidTransform",
]
