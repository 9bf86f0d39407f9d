"""Multi-objective Bayesian optimization of cell-culture seed-train designs.

A mechanistic seed-train simulator with Monte-Carlo uncertainty propagation,
coupled to a Gaussian-process / expected-hypervolume-improvement optimizer
over the shake-flask filling volumes.
"""

from .kinetics import CultureState, FeedSchedule, ModelParameters
from .integrator import IntegratorConfig, Trajectory, integrate
from .seedtrain import (
    ObjectiveVector,
    PassagingEvent,
    ScaleConfig,
    SeedTrainConfig,
    SeedTrainResult,
    ThresholdUnreachable,
    UncertaintySpec,
    execute_passaging,
    find_passaging_time,
    required_transfer_vcd,
    simulate_seed_train,
)
from .gp import GpHyperparams, GpModel, fit, kernel_se, predict
from .mobo import (
    DesignSpace,
    OptimizerConfig,
    ParetoArchive,
    acquisition_ehvi,
    hypervolume,
    latin_hypercube,
    optimize,
    pareto_filter,
    propose_next,
)

__version__ = "0.1.0"
