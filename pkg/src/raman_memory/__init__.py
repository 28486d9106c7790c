"""Simulation and optimisation toolkit for far-detuned Raman quantum memories."""

from .grid_pulse import ComplexEnvelope, Grid, PulseShapeSpec, make_pulse
from .memory_dynamics import (
    MemoryParams,
    efficiencies,
    propagate_retrieval,
    propagate_storage,
    storage_kernel_matrix,
)
from .optimal_control import optimal_spin_mode, shape_write_pulse
from .quantum_states import ChannelParams, DensityMatrix, coherent_state, uhlmann_fidelity
from .tomography import MLConfig, QuadratureRecord, ml_reconstruct, simulate_homodyne

__version__ = "0.1.0"
