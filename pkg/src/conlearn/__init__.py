"""Constrained learned sets from small training data.

Given a few realizations of a high-dimensional random vector and
statistical-moment targets expressed through an implicit constraint map,
the package builds a kernel-mixture reference density in reduced
coordinates, samples it with a damped-Hamiltonian SDE, and iterates a
Lagrange multiplier so the generated samples match the targets. A
desk-scale stochastic-homogenization boundary value problem provides the
flagship implicit constraint.
"""

from .errors import (BvpSolveFailure, ChainDiverged, ConfigError,
                     ConlearnError, DegenerateTrainingSet, MissingSurrogate,
                     NonFiniteConstraint, NotSpd, SingularHessian,
                     ZeroFirstIterationError, ZeroVarianceComponent)
from .kde_prior import (KdePrior, NormalizationMap, TrainingSetRaw,
                        TrainingSetReduced, bandwidths, normalize_training)
from .surrogate import SurrogateModel
from .sampler import (IsdeConfig, LearnedSet, NoiseBank, drift,
                      init_conditions, run)
from .solver import (Block, ConstraintSpec, LagrangeTrace, PosteriorResult,
                     estimate_grad_hessian, newton_step, solve)
from .constraints import (HomogenizationBlocks, HomogenizationConstraint,
                          TiltingOracle, homogenization_spec,
                          linear_moment_spec, residue)
from .elasticity import (ElasticityBvp, FieldHyper, HexMesh,
                         MaterialFieldSample, TrainingLayout,
                         gaussian_field, generate_training, moment_report,
                         sample_prior)

__version__ = "0.1.0"
