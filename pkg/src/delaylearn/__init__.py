"""Online learning of synaptic weights and transmission delays in spiking networks."""

from .config import ConfigError, NetworkConfig, RunConfig, load_run_config
from .data import (DatasetManifest, DenseSample, EventSample, FormatError, bin_spatial,
                   gen_sparsity_mask, read_sample, subsample_temporal, synth_coincidence, write_sample)
from .dynamics import NetworkParams, decay_factor, effective_delay, forward_sample, init_params
from .kernels import gauss_kernel, gauss_kernel_ddelay, surrogate_pd
from .online import OnlineLearner, TrainingError, apply_updates, learning_signal

__all__ = [
    "ConfigError", "NetworkConfig", "RunConfig", "load_run_config",
    "DatasetManifest", "DenseSample", "EventSample", "FormatError", "bin_spatial",
    "gen_sparsity_mask", "read_sample", "subsample_temporal", "synth_coincidence", "write_sample",
    "NetworkParams", "decay_factor", "effective_delay", "forward_sample", "init_params",
    "gauss_kernel", "gauss_kernel_ddelay", "surrogate_pd",
    "OnlineLearner", "TrainingError", "apply_updates", "learning_signal",
]
