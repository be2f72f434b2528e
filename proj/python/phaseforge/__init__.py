"""Phase-map synthesis and undersampled MRI reconstruction toolkit.

Thin wrapper over the compiled ``_phaseforge`` extension: the VE-SDE noise
schedule, conditional phase sampling, Cartesian mask construction, k-space
assembly, reconstruction, and image-quality metrics.
"""

from ._phaseforge import (  # noqa: F401
    ConfigError,
    ContractError,
    IoError,
    NoiseSchedule,
    NumericError,
    apply_mask,
    assemble_kspace,
    center_crop_resize,
    effective_acceleration,
    embed_features,
    fft2c,
    frechet_distance,
    generate_phantom,
    ifft2c,
    make_mask,
    marginal_perturb,
    normalize_magnitude,
    nrmse,
    psnr,
    sample_phase,
    smooth_phase,
    ssim,
    varnet_reconstruct,
    wrap_phase,
    zero_filled_recon,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractError",
    "IoError",
    "NoiseSchedule",
    "NumericError",
    "apply_mask",
    "assemble_kspace",
    "center_crop_resize",
    "effective_acceleration",
    "embed_features",
    "fft2c",
    "frechet_distance",
    "generate_phantom",
    "ifft2c",
    "make_mask",
    "marginal_perturb",
    "normalize_magnitude",
    "nrmse",
    "psnr",
    "sample_phase",
    "smooth_phase",
    "ssim",
    "varnet_reconstruct",
    "wrap_phase",
    "zero_filled_recon",
    "__version__",
]
