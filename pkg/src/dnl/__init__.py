"""Dense non-local networks, their Volterra integral-equation limit and the operators between them."""

__version__ = "0.1.0"

from ._backend import BACKEND  # noqa: E402
from .bridge import PiecewiseCurve, PiecewiseSurface, extend_params, recovery_sequence, sample_params, sup_distance  # noqa: E402
from .continuous import (  # noqa: E402
    ContinuousParams, GridSolution, ParamGenerator, cont_bound, reg_continuous, residual, smooth_params, solve,
)
from .discrete import (  # noqa: E402
    DiscreteParams, DiscreteTrajectory, NetConfig, flip, forward, objective, param_norm, reg_discrete, state_bound,
)
from .errors import (  # noqa: E402
    DegenerateNormalizerError, DNLError, InvalidInputError, NumericalOverflowError, SolverStallError,
    TrainingDivergedError,
)
from .linalg import affine_map, spectral_norm  # noqa: E402
from .training import Dataset, LossSpec, TrainConfig, grad_fd, grad_reverse, train  # noqa: E402
from .transforms import KernelFamily, TransformParams, apply_transform, growth_bound, lipschitz_bound  # noqa: E402
