"""Work statistics of coherently prepared quantum systems from full counting statistics."""

__version__ = "0.1.0"

from . import fcs, ising  # noqa: E402
from .fcs import (  # noqa: E402,F401
    SpectralOperator, StateMatrix, Protocol, WorkQuasiDistribution,
    WorkDecomposition, FreeEnergyReport, spectral_decompose, thermal_state,
    split_state, characteristic_function, work_moment, quasidistribution,
    work_decomposition, work_fluctuation, fluctuation_relation, free_energy,
    relative_entropy, thermodynamic_report,
)
from .ising import IsingQuenchSpec  # noqa: E402,F401
