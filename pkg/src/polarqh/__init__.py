"""Stochastic quantum hydrodynamics in polar coordinates.

Forward/backward diffusion ensembles, Madelung fields, stationary-state
solves with loop-integral quantization, time propagation, and the
coordinate-dependent variance-product uncertainty bounds they satisfy.
"""

from .geometry import (CARTESIAN, POLAR, CartesianGrid, CoordinateChart,
                       DomainError, PolarCellGrid, PolarGrid,
                       christoffel_trace, integrate, to_cartesian)
from .madelung import (FLOOR_FRACTION, MadelungState, PhaseUnwrapError,
                       PhysicalParams, VelocityFields, compose, decompose,
                       oscillator_potential, osmotic_split, quantum_force,
                       velocity_from_phase)
from .eigensolver import (EigenstateSpec, SolverError, WindingResult,
                          solve_radial, stationary_residual, winding_number)
from .sde import (DriftAccumulator, EnsembleConfig, EnsembleRun, NoiseStream,
                  Particle, Trajectory, backward_step, estimate_density,
                  estimate_drifts, forward_step, simulate)
from .evolution import (EvolutionConfig, SchrodingerPropagator, StepRejected,
                        continuity_residual, evolve, hydro_residual,
                        schrodinger_step)
from .uncertainty import (EnsembleEvaluation, PairBound, UncertaintyReport,
                          angular_bound, evaluate_report, general_bound,
                          momentum_fields, momentum_mean, radial_bound,
                          variances)

__version__ = "0.1.0"
