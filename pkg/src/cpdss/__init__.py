"""Secondary-structure-conditioned protein sequence generation with latent graph diffusion."""

from .config import Config, desk_preset, full_preset

__version__ = "0.1.0"

__all__ = ["Config", "desk_preset", "full_preset", "__version__"]
