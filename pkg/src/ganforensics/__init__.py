"""GAN image forensics: a small CNN discriminator trained on blur/noise
preprocessed images, plus a cross-source generalization harness."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
