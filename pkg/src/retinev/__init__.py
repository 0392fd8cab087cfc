"""Event-based low-light image enhancement from temporal-mapping events."""

from .config import RunConfig, load_run_config
from .estimator import LowLightEnhancer
from .events import EventStream, FpeMap, SensorConstants, extract_fpe
from .model import ModelConfig, RetinevModel
from .raster import EncodedRaster, LinearRaster, gamma_decode, gamma_encode

__version__ = "0.1.0"

__all__ = [
    "EncodedRaster", "EventStream", "FpeMap", "LinearRaster",
    "LowLightEnhancer", "ModelConfig", "RetinevModel", "RunConfig",
    "SensorConstants", "extract_fpe", "gamma_decode", "gamma_encode",
    "load_run_config", "__version__",
]
