"""Lattice sums, ergodic averages and relaxation for twisted bilayers."""

__version__ = "0.1.0"

from .errors import (MoireError, ConfigError, ParseError, ValidationError, NumericalError,
                     SingularBasis, DegenerateScale, DivergentTail, NotDiophantine, NoDecay,
                     QuadratureNotConverged, LineSearchStalled, DegenerateFit)
from .lattice import (BilayerGeometry, SublatticeSpec, build_geometry, graphene_basis, rotation,
                      cell_decompose, moire_frac, layer_frac, disregistry_matrix, moire_scale,
                      moire_scale_ratio, commensuration_scan, load_geometry, geometry_from_dict,
                      geometry_to_dict)
from .diophantine import (DiophantineScan, RotationSpec, ErrorPrefactor, diophantine_scan,
                          diophantine_distance, error_prefactor, fourier_decay_sup, zeta, zeta_tail_bound,
                          pair_constant_surrogate, moire_frequency_scale)
from .ergodic import (PeriodicObservable, DoubleObservable, random_hermitian_observable,
                      dirichlet_kernel, lattice_window, ergodic_average, ergodic_average_double,
                      cell_grid, limit_average, limit_average_double, reconstruct_fourier)
from .potentials import (PairPotential, ZeroPotential, RadialPotential, ProductPotential,
                         MorseRule, LennardJonesRule, GaussianRule, TabulatedRule,
                         morse_potential, lennard_jones_potential, gaussian_potential,
                         graphene_morse_lj, decay_radius, cutoff_radius, weighted_norm_estimate,
                         load_potential, potential_from_dict)
from .fields import DisplacementField, load_displacements, save_displacements
from .energy import (ElasticModuli, EnergyBreakdown, PairStencil, InterlayerSum, misfit_energy,
                     stacking_points, monolayer_energy_N, monolayer_energy_limit,
                     interlayer_energy_N, interlayer_energy_limit, elastic_density,
                     cauchy_born_energy, cauchy_born_spectral, total_energy)
from .relax import RelaxConfig, RelaxTrace, ParamLayout, energy_gradient, relax, domain_wall_profile
from .config import ExperimentConfig, ConvergenceRecord, RateFit, parse_config, fit_rate
from ._reduce import set_threads, get_threads
