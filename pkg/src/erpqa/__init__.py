"""Geometry-grounded question answering over equirectangular panoramas."""

__version__ = "0.1.0"

from .geometry import CubeFace, ErpDims  # noqa: E402
from .records import QaRecord  # noqa: E402

__all__ = ["CubeFace", "ErpDims", "QaRecord", "__version__"]
