"""warmflow: flow-matching action-chunk policies with warm-started source
distributions, plus the diagnostics and toy worlds to study them."""

from .diagnostics import (BranchingReport, Coupling, CurvatureReport, Quadrature,
                          branching_cost, curvature, curvature_sweep,
                          fm_risk_of_bayes_field, independent_coupling,
                          mixture_posterior_mean, monotone_coupling,
                          warm_bound_check, warm_coupling)
from .errors import ConfigurationError, NumericError, UsageError, WarmflowError
from .flow import (FlowPath, Interpolant, LINEAR, euler_sample, fm_train_step,
                   interpolate, linear_interpolant, target_velocity)
from .nets import (AdamState, MlpParams, adam_step, init_adam, init_mlp,
                   load_checkpoint, loss_and_grad, make_rng, mlp_forward,
                   save_checkpoint, time_embedding)
from .policy import WarmFlowPolicy
from .prior import (EpisodeBuffer, PriorSpec, WarmMean, default_sigma,
                    past_infer_mean, past_train_mean, preview_infer_mean,
                    preview_train_mean, sample_prior)
from .priorrl import (LearningCurve, NoiseSpaceMdp, ResidualLearner,
                      ResidualSpec, RlBudget, noise_to_action,
                      residual_episode, train_residual)
from .rollout import (EpisodeResult, EvalReport, RolloutConfig, SuccessStats,
                      SwitchStats, beta_pdf, evaluate, mode_switch_count,
                      run_episode)
from .worlds import (ChunkDataset, Demo, DemoSet, MixtureTarget, NavWorld,
                     buffer_from_demos, dataset_from_buffer, gen_chunked_dataset,
                     gen_mixture_target, gen_nav_demos, nav_rollout_step)

__version__ = "0.1.0"
