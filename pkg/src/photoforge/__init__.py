"""photoforge: photoelastic fringe simulation and force reconstruction for circular particles."""

from .elastic import (
    ForceList,
    ForceTriplet,
    ParticleSpec,
    StressTensor2D,
    contact_stress,
    flamant_radial_stress,
    intensity,
    principal_stress_difference,
    total_stress,
)
from .rendering import (
    ImageSpec,
    IntensityImage,
    gaussian_blur,
    preprocess,
    render,
    resize_nearest,
    rotate_image,
)
from .sampling import (
    SamplerConfig,
    SamplerExhausted,
    complete_balance,
    sample_force_list,
    validate_force_list,
)
from .datasets import DatasetConfig, SampleRecord, generate, read_manifest, write_manifest
from .inverse import (
    ReconstructionResult,
    SolverConfig,
    initial_guess,
    reconstruct,
    reconstruct_fixed_m,
    residual,
)
from .metrics import EvalReport, count_accuracy, evaluate_forces, match_forces, net_force_stats

__version__ = "0.1.0"
