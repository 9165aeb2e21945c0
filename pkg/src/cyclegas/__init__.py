"""Perfect sampling of spatial random permutations viewed as cycle gases."""

__version__ = "0.1.0"

from .errors import CycleGasError  # noqa: E402,F401
from .lattice import BoxRegion, Cutoffs, Cycle, CycleCatalog, Permutation, canonicalize, enumerate_cycles  # noqa: E402,F401
from .potentials import PotentialSpec, gaussian, nearest_neighbor, power_law, shifted, table_potential  # noqa: E402,F401
