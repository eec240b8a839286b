"""Trajectory optimization with iLQR, with derivatives from either the true
plant model or a neural network fitted online to executed rollouts."""

from .backend import NUMBA_ENABLED, backend_name
from .plants import (BicyclePlant, CartpolePlant, InaccuracySpec, Plant,
                     PlantError, RolloutDiverged, perturb_params, plant_from_dict)
from .costs import (CostExpansion, CostExpansionSchedule, CostSpec,
                    MODE_REGULATION, MODE_TRACKING, cost_expansion,
                    expand_trajectory, stage_cost, terminal_cost, total_cost)
from .ilqr import (BackwardPassResult, GainSchedule, IterationRecord,
                   LinearizationSchedule, LineSearchResult, RegularizationFailure,
                   SolveReport, SolverSettings, Trajectory, ValueExpansion,
                   backward_pass, forward_pass, line_search, linearize_with_fd,
                   solve_model_based)
from .network import (ARCH_LARGE, ARCH_RESIDUAL, ARCH_SMALL, ARCHITECTURES,
                      FilterConfig, NetworkParams, NetworkSpec, NormStats,
                      TrainLog, TrainSettings, init_network, input_jacobians,
                      linearize_trajectory, predict, predict_batch,
                      smooth_jacobians, train)
from .data import (Dataset, DatasetFormatError, TAG_PERTURBED, TAG_RANDOM,
                   TAG_ROLLOUT, append_trajectory, collect_random_trials, load,
                   save)
from .loop import (IterationOutcome, LoopSettings, NeuralSolveReport,
                   RunMetrics, escape_perturbation, neural_iteration, pretrain,
                   solve_neural_ilqr)

__version__ = "0.1.0"
