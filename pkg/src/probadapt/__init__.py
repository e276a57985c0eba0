"""Probability-space unsupervised domain adaptation on a deterministic numpy core.

A pretrained classification head is kept alive through adaptation: its output
distribution is aligned across domains with calibrated pairwise weights, and
in return it calibrates a Gini-impurity pseudo-label loss on the new task
head. Everything runs on an in-package reverse-mode autodiff substrate, so
runs are bit-reproducible from a single seed.
"""

from .autodiff import EPS, Tape, Tensor, backward, finite_difference_check
from .config import ExperimentConfig, config_hash, parse_config, serialize_config
from .data import (DomainDataset, GeneratorSpec, PretrainTask, Shift, UdaPair,
                   UnlabeledDataset, accuracy, make_pretrain_task, make_uda_pair,
                   proxy_a_distance)
from .errors import (ConfigError, ContractViolationError, DomainError,
                     MissingClassError, TrainingDivergedError)
from .losses import (CgiState, beta_factor, beta_variant_eval, calibration_matrix,
                     cgi_gradient_compact, cgi_gradient_reference, cgi_loss,
                     classification_loss, cpa_loss, gini_impurity, js_divergence,
                     pair_distance, prototype_regularizer, pseudo_labels,
                     source_weights, target_weights, transform_probability)
from .model import (ParamGroups, feature_extract, fig1_analog, head_forward,
                    init_params, learn_prototype, load_checkpoint, predict_proba,
                    pretrain, save_checkpoint, split_source)
from .optim import SgdState, sgd_step
from .runner import RunRecord, run_experiment, run_grid
from .trainer import (PdaConfig, ScheduleConfig, TrainConfig, TrainReport,
                      lambda_schedule, lr_schedule, pda_category_counts, pda_mask,
                      train, train_step)

__version__ = "0.1.0"
