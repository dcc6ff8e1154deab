"""Compressive fluorescence microscopy: phantoms, structured-illumination
sensing, sparse recovery and undersampling sweeps."""

from .analysis import SweepReport, SweepSpec, psnr, rel_error, run_sweep, support_f1
from .errors import CfmError, ConfigurationError, FormatError, LengthError, ShapeError, SolverError
from .phantoms import PhantomSpec, Scene, SpectralCube, generate_cube, generate_scene, sparsity
from .recovery import (
    RecoveryResult,
    SolverConfig,
    estimate_step_size,
    group_soft_threshold,
    reconstruct_joint_spectral,
    reconstruct_l1,
    reconstruct_tv,
    soft_threshold,
)
from .sensing import (
    MeasurementRecord,
    NoiseModel,
    PatternSet,
    apply_adjoint,
    apply_operator,
    generate_patterns,
    measure,
    measure_cube,
)
from .transforms import TransformKind, dct2_forward, dct2_inverse, fwht, haar_forward, haar_inverse

__version__ = "0.1.0"
