"""Subset-selection accelerated adversarial training on toy datasets."""

from .attacks import AttackSpec, RobustnessReport, evaluate_robust_accuracy, fgsm_perturb, pgd_attack, project_linf
from .autodiff import (
    GradientRecord,
    Network,
    NonFiniteLossError,
    ParamSet,
    ShapeMismatchError,
    evaluate_with_gradients,
    finite_difference_gradient,
)
from .bullet import BudgetPolicy, CategoryCounts, allocate_attack_budget, categorize_examples, track_dynamics
from .dataio import Dataset, generate_toy_dataset, load_dataset, split_train_val, write_dataset
from .losses import LossConfig, cross_entropy, kl_divergence, mart_loss, trades_loss
from .models import ModelSpec, build_network, forward_logits, init_model, load_checkpoint, predict, save_checkpoint
from .selection import (
    SelectorConfig,
    SubsetSelection,
    glister_gain,
    last_layer_gradients,
    omp_solve,
    select_adv_glister,
    select_adv_gradmatch,
    select_random,
)
from .trainer import TrainConfig, adversarial_train, lr_schedule, selection_schedule, sgd_update

__version__ = "0.1.0"
