"""Toy latent-space image editor: mask-blended diffusion over VAE latents."""

__version__ = "0.1.0"

from .backend import backend_name
from .schedule import NoiseSchedule, make_schedule, default_schedule
from .editor import EditConfig, blended_edit, generate
from .denoiser import Prompt, resolve_prompt
from .pipeline import ModelBundle, load_bundle, run_edit

__all__ = [
    "__version__",
    "backend_name",
    "NoiseSchedule", "make_schedule", "default_schedule",
    "EditConfig", "blended_edit", "generate",
    "Prompt", "resolve_prompt",
    "ModelBundle", "load_bundle", "run_edit",
]
