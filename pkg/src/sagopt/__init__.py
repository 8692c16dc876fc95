"""Average-gradient optimization for finite sums, with the surrounding
baselines, rate arithmetic, and experiment harness.

The hot per-iteration loops run through a compiled extension when it is
available and an equivalent pure-Python lane otherwise; ``backend_name``
says which one was picked at import.
"""
from ._backend import BACKEND as backend_name
from .data import (SparseDataset, SynthSpec, add_bias, parse_libsvm,
                   serialize_libsvm, standardize, synth_generate)
from .losses import (LOGISTIC, SQUARED, LipschitzInfo, LossModel,
                     batch_hessian_lipschitz, gradient_variance_at,
                     lipschitz_constants)
from .samplers import DiscreteSampler, Rng
from .sag import (JitState, Minibatch, SagDriver, SagState, SamplingPolicy,
                  StepSizePolicy, export_state, finalize_jit, import_state,
                  line_search_update, make_minibatch_partition,
                  minibatch_step_size, sag_minibatch_step, sag_step,
                  sag_step_jit, sag_step_nonuniform)
from .baselines import (AfgDriver, AfgState, DcaDriver, DcaState, FgDriver,
                        FgState, IagState, PcdDriver, PcdState, SgDriver,
                        SgState, afg_step, asg_average, dca_step,
                        dual_objective, fg_step, iag_step, pcd_step, sg_step)
from .theory import (ConstraintSet, GridReport, LyapunovConstants,
                     constraint_residuals, least_squares_rates,
                     lyapunov_constants, rate_table, sag_bound, sag_rate,
                     verify_grid)
from .harness import (BudgetExhausted, ExperimentConfig, MinibatchDriver,
                      ReferenceOptimum, SweepResult, Trace, build_driver,
                      compute_reference, effective_passes, emit_csv,
                      emit_svg, grid_sweep, load_dataset, parse_config,
                      parse_trace_csv, run_experiment)

__version__ = "0.1.0"
