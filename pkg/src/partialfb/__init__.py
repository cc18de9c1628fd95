"""Adaptive partial-feedback channel estimation and transmit beamforming simulator."""

from .beamformer import Modulation, Scheme, detect, make_beamformer, modulate
from .channel import NoiseModel, estimate_stale, new_epoch, receive
from .config import PRESETS, SimConfig
from .core import RngStream, draw_complex_gaussian, inner_product, norm_sq
from .estimator import (
    EstimatorState,
    Phase,
    TrainingSequence,
    admissible_interval,
    apply_step,
    optimal_step,
    run_session,
    run_session_mimo,
    run_sessions_batch,
)
from .feedback import FeedbackMessage, MessageKind, decode_message, encode_message
from .harness import convergence_stats, mrc_ber_oracle, run_ber_sweep, run_histogram, train_codebook
from .quantizer import StepCodebook, collect_step_samples, design_codebook

__version__ = "0.1.0"
