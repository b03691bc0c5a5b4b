"""Bayesian risk policy gradient for MDPs with uncertain transition kernels."""
from .bayes import BetaBelief, Posterior, TransitionDataset, mle, posterior_update, sample_theta
from .frozen_lake import FrozenLake, LakeMap, LakeParams, build_costs, build_kernel, generate_data
from .gradients import GradConfig, assemble_gradient, grad_c_direct, grad_c_variational, grad_c_zeroth_order
from .losses import LossSpec, eval_loss, grad_loss
from .mdp import MdpModel, compute_occupancy, solve_q_values, value_iteration
from .optimizer import EpisodeSchedule, RunConfig, br_pg, episodic_br_pg, schedule_iters
from .policies import PolicyParams, to_table
from .risk import RiskMeasure, cvar_weights, rho_value, saa_envelope_solve

__version__ = "0.1.0"
