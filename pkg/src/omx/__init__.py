"""Shaped-light displacement measurement: simulation and estimation tools.

The package models a displacement-coupled optical system watched by a
photon-counting camera, and the family of pixel-gain estimators used to
read the motion out of the frames: half-plane (split) gains, centroid
tracking gains and the matched gain built from the measured response
mode.  A transmission-matrix toolkit provides calibration and focusing
through a random medium, and the harness wires everything into file-based
experiment runs.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DegeneracyError
from .grid_optics import (
    BeamParams,
    ComplexField,
    PixelGrid,
    RealField,
    analytic_v00,
    derivative_mode,
    displaced_tem00,
    energy,
    field_from_csv,
    field_to_csv,
    first_order_displaced,
    inner,
    load_field_fld1,
    normalized,
    save_field_fld1,
    shifted_field,
    tem00,
    unit_direction,
)
from .scattering import PureDisplacement, RandomMedium, true_derivative
from .detection import (
    DriveConfig,
    Frame,
    NoiseConfig,
    record_sequence,
    reference_frame,
)
from .tm_toolkit import (
    TransmissionMatrix,
    enhancement,
    grain_size,
    measure_tm,
    phase_conjugate,
    target_spot,
)
from .estimators import (
    EstimatorReport,
    GainMap,
    modulation_depth,
    motion_signal,
    optimal_gain,
    quantum_limit,
    snr,
    split_gain,
    tracking_gain,
)
from .harness import load_config, make_config

__all__ = [
    "BeamParams",
    "ComplexField",
    "ConfigError",
    "DegeneracyError",
    "DriveConfig",
    "EstimatorReport",
    "Frame",
    "GainMap",
    "NoiseConfig",
    "PixelGrid",
    "PureDisplacement",
    "RandomMedium",
    "RealField",
    "TransmissionMatrix",
    "analytic_v00",
    "derivative_mode",
    "displaced_tem00",
    "energy",
    "enhancement",
    "field_from_csv",
    "field_to_csv",
    "first_order_displaced",
    "grain_size",
    "inner",
    "load_config",
    "load_field_fld1",
    "make_config",
    "measure_tm",
    "modulation_depth",
    "motion_signal",
    "normalized",
    "optimal_gain",
    "phase_conjugate",
    "quantum_limit",
    "record_sequence",
    "reference_frame",
    "save_field_fld1",
    "shifted_field",
    "snr",
    "split_gain",
    "target_spot",
    "tem00",
    "tracking_gain",
    "true_derivative",
    "unit_direction",
    "__version__",
]
