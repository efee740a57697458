"""Numerical study of the quasi-continuous (dilute) approximation of a continuous gas."""

__version__ = "0.1.0"

from .estimate import Estimate, NumericalRejection
from .geometry import (Box, Configuration, CubePartition, build_partition, chi_minus, chi_plus,
                       compatible, dense_cubes, is_dilute, occupancy, pattern_indicator)
from .potential import (PairPotential, StabilityConstants, b_of_a, delta_constants,
                        delta_decompose, find_a_star, make_potential, pair_energy,
                        pair_interaction, phi_split, sss_constants, upsilon_eps)
from .manybody import (CubeTuple, I_bar, I_sup, ManyBodyFamily, check_cube_relations, manybody_constants,
                       mb_energy, mb_interaction, pair_only, pair_plus_triple)
from .stability import StabilityReport, sample_configs, verify_bound
from .ensemble import (EnsembleParams, canonical_integral, correlation, dilute_correlation,
                       dilute_partition_function, partition_function)
from .convergence import (SweepResult, epsilon1, remainder_rhs, sweep, verify_identity)
