"""Temporal-frequential convolutional network for single-channel speech
enhancement: spectral front end, the network itself (with depth-separable and
dense-connected variants), causal/semi-causal streaming inference, and the
training procedure — all on numpy.
"""

from .config import (
    CausalityMode,
    ConfigError,
    ModelConfig,
    RunConfig,
    StftConfig,
    TrainConfig,
    tcn_lps_config,
    tfcn_config,
    tfcn_d_config,
)
from .dsp import (
    Normalizer,
    compute_norm_stats,
    istft,
    load_normalizer,
    lps,
    reconstruct,
    save_normalizer,
    stft,
)
from .enhance import enhance_lps, enhance_lps_streaming, enhance_waveform, segmental_snr
from .model import Model, build_model, param_count, probe_causality
from .padding import PadPlan, max_look_ahead, plan_padding, receptive_field
from .streaming import StreamingModel
from .training import (
    Adam,
    ScheduleState,
    TrainingError,
    frame_rms_loss,
    frame_rms_loss_grad,
    segment_corpus,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "CausalityMode",
    "ConfigError",
    "Model",
    "ModelConfig",
    "Normalizer",
    "PadPlan",
    "RunConfig",
    "ScheduleState",
    "StftConfig",
    "StreamingModel",
    "TrainConfig",
    "TrainingError",
    "build_model",
    "compute_norm_stats",
    "enhance_lps",
    "enhance_lps_streaming",
    "enhance_waveform",
    "frame_rms_loss",
    "frame_rms_loss_grad",
    "istft",
    "load_normalizer",
    "lps",
    "max_look_ahead",
    "param_count",
    "plan_padding",
    "probe_causality",
    "reconstruct",
    "save_normalizer",
    "segment_corpus",
    "segmental_snr",
    "stft",
    "tcn_lps_config",
    "tfcn_config",
    "tfcn_d_config",
    "train",
]
