"""Inversion of guided diffusion sampling on a toy posterior-mean model."""

from .config import DatasetSpec, ExperimentConfig, load_config
from .dynamics import (
    Trajectory,
    ddim_inverse_step,
    ddim_step,
    run_forward_inversion,
    run_reverse,
    stochastic_forward,
)
from .editing import EditMethod, EditSpec, SDEditMode, edit_condition_swap, edit_sdedit
from .errors import ConfigurationError, DomainError, OptimizerError
from .inversion import (
    InversionResult,
    Method,
    NullTextSchedule,
    OptimizerConfig,
    invert,
    invert_ddim_cfg,
    invert_negative_prompt,
    invert_null_text,
    optimize_null_text,
    null_text_error_residual,
)
from .metrics import centered_cosine, mse, noise_gap_l1, psnr
from .oracle import OracleDataset, cfg_combine, one_hot, predict_noise, predict_noise_grad, uniform
from .schedule import NoiseSchedule, SigmaSchedule, StepPlan, build_schedule, ddpm_sigmas, make_step_plan

__all__ = [name for name in dir() if not name.startswith("_")]
