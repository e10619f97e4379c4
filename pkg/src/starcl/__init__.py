"""Rehearsal-based continual learning with a worst-case output-stability regularizer."""
from .netcore import Batch, GradSet, LossSpec, ParamSet, axpy, backward, forward, kl_divergence, layer_norms
from .rehearsal import ReplayBuffer
from .methods import MethodConfig, cl_loss_grad, combined_update
from .star import StarConfig, compute_delta, lfg, select_correct, star_grad, star_step

__version__ = "0.1.0"
