"""Port-Hamiltonian momentum optimization with goal-oriented braking."""
from .data import (BatchPlan, Dataset, load_cifar10_binary, load_idx, minibatches, split,
                   synth_blobs, write_idx)
from .errors import (ConfigError, ConsistencyError, ContractError, DivergenceError,
                     FormatError, GoalPhsError, NumericInputError)
from .models import (MlpClassifier, MlpSpec, NoisyGradient, double_well,
                     finite_difference_grad, mlp_classifier, quadratic, rosenbrock)
from .optim import (EnergyRecord, GoalPolicy, Mode, Monitor, PhsConfig, PhsState, RunRecord,
                    StepBudget, apply_braking, goal_trigger, hamiltonian, phs_step,
                    run_optimizer, sgd_step)

__version__ = "0.1.0"
