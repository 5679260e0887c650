"""Training-free content injection into the bottleneck of a diffusion denoiser.

Subpackages hold the pieces: ``schedule`` (noise schedule and timestep plan),
``denoiser`` (a small NumPy U-Net with manual backprop), ``sampler`` (DDIM and
the injection loop), ``hspace`` (bottleneck blending), ``calibration``,
``diagnostics``, ``toyset`` and ``cli``.
"""

from .calibration import latent_calibration_step
from .errors import ConfigError, ContentInjectError, ContractError, DegenerateInputError, NumericalError
from .hspace import InjectionConfig, slerp_norm_matched
from .sampler import capture_content_trace, ddim_invert, injectfusion_generate, reconstruct
from .schedule import make_plan, make_schedule

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContentInjectError",
    "ContractError",
    "DegenerateInputError",
    "InjectionConfig",
    "NumericalError",
    "capture_content_trace",
    "ddim_invert",
    "injectfusion_generate",
    "latent_calibration_step",
    "make_plan",
    "make_schedule",
    "reconstruct",
    "slerp_norm_matched",
]
