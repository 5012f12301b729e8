"""Backdoor injection and evaluation for toy diffusion models.

A general schedule ``(alpha_hat, beta_hat, rho_hat)`` drives the
reparametrised forward process, the trigger-corrected losses and a family of
samplers that share marginals for every stochasticity level ``zeta``.
"""
from .schedule import (AdmissibilityError, Correction, DiscreteSchedule, Kind, SchedulerSpec, build_schedule,
                       forward_sample)
from .reparam import ReparamCoeffs, compute_reparam
from .transition import TransitionCoeffs, compute_transition, correction_coefficient
from .loss import LossWeights, backdoor_loss, blend_trigger, caption_trigger_loss, clean_loss, unified_loss
from .denoiser import Denoiser, NumericAbort, OptimState, init_denoiser, load_checkpoint, save_checkpoint, step
from .sampler import SamplerConfig, denoise, init_latent, inpaint, reverse_step, sample
from .poison import PoisonSpec, ToyTextEncoder, make_dataset, stack_examples, toy_data
from .metrics import EvalReport, evaluate, frechet_proxy, mse, mse_threshold, ssim
from .analytic import AnalyticModel, GaussianData, analytic_eps, baddiffusion_loss, brute_reparam

__version__ = "0.1.0"
