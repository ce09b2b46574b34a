"""Erase-latency-aware SSD simulator with fail-bit-driven erase pulse sizing."""
from .chip import (ChipModel, ChipParams, Geometry, TimingParams, FailBitParams, Calibration,
                   build_chip, load_default_params)
from .erase import EraseScheme, EraseTimingTable, SefBitmap, EraseOutcome, SCHEMES

__all__ = [
    "ChipModel", "ChipParams", "Geometry", "TimingParams", "FailBitParams", "Calibration",
    "build_chip", "load_default_params",
    "EraseScheme", "EraseTimingTable", "SefBitmap", "EraseOutcome", "SCHEMES",
]
__version__ = "0.1.0"
