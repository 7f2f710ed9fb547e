"""Gaussian-process-prior VAEs for disentangled video representations,
with geodesic-loss latent prediction."""
__version__ = "0.1.0"

from . import autodiff, checkpoint, datasets, geodesic, gp_prior, layers, linalg, metrics, predictor, vae
from .errors import MGPError
