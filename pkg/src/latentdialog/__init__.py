"""Two-step dialog response generation in latent space.

Step 1 trains a sentence variational autoencoder; Step 2 trains a
conditional GAN (plus an auxiliary MSE loss) on the frozen VAE's latent
space to map a query's code to a response code, which the VAE decoder
turns back into text. Includes the full automatic evaluation suite
(BLEU avg/max/HM, intra/inter distinct-n, ASL, TTR, Kneser-Ney PPL).
"""

from ._kernels import BACKEND_NAME as kernel_backend

__version__ = "0.1.0"
__all__ = ["kernel_backend", "__version__"]
