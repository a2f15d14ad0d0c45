"""Denoising diffusion image synthesizer for small grayscale corpora."""

from .core import ConfigError, DomainError, NumericError, ShapeError, batch_mse, gaussian_like, make_rng
from .denoiser import PRESETS, UNetConfig, UNetDenoiser, linear_oracle_denoiser, sinusoidal_embedding, unet_init
from .diffusion import forward_closed_form, forward_step, reverse_step, sample
from .evaluation import EvalReport, evaluate_pair, ssim
from .preprocess import PipelineConfig, denormalize, load_corpus, preprocess
from .schedule import NoiseSchedule, linear_schedule, posterior_coefficients
from .train import Checkpoint, TrainConfig, checkpoint_load, checkpoint_save, train

__version__ = "0.1.0"
