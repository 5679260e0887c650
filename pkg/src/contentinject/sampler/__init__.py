from .ddim import (
    LatentState,
    ZeroPredictor,
    asyrp_step,
    capture_content_trace,
    ddim_invert,
    ddim_step,
    direction_to_xt,
    predict_x0,
    reconstruct,
    run_model,
)
from .generate import GenerationResult, StepRecord, injectfusion_generate

__all__ = [
    "GenerationResult",
    "LatentState",
    "StepRecord",
    "ZeroPredictor",
    "asyrp_step",
    "capture_content_trace",
    "ddim_invert",
    "ddim_step",
    "direction_to_xt",
    "injectfusion_generate",
    "predict_x0",
    "reconstruct",
    "run_model",
]
