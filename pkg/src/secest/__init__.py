"""Secure state estimation for discrete-time LTI systems under time-varying
sparse sensor attacks.

Each sensor runs a reduced-order observer on the modal coordinates it can
see. Coordinate-wise medians fuse the local estimates, and a residual check
resets local observers that stray from the fused value.
"""

from secest.errors import SecestError
from secest.model import ModalMode, ModalSystem, RawSystem, SystemModel, state_pairing, to_modal, validate_raw
from secest.subspace import SensorDecomposition, coverage, decompose, sparse_observability_index
from secest.gains import GainDesign, GainSet, DetectorConfig, compute_gamma, design_all, design_gain, min_spectral_gain
from secest.estimator import EstimatorBank, LuenbergerObserver, fuse
from secest.threat import AttackScenario, Signal
from secest.sim import SimulationTrace, metrics, run

__all__ = [
    "AttackScenario",
    "DetectorConfig",
    "EstimatorBank",
    "GainDesign",
    "GainSet",
    "LuenbergerObserver",
    "ModalMode",
    "ModalSystem",
    "RawSystem",
    "SecestError",
    "SensorDecomposition",
    "SimulationTrace",
    "Signal",
    "SystemModel",
    "compute_gamma",
    "coverage",
    "decompose",
    "design_all",
    "design_gain",
    "fuse",
    "metrics",
    "min_spectral_gain",
    "run",
    "sparse_observability_index",
    "state_pairing",
    "to_modal",
    "validate_raw",
]

__version__ = "0.1.0"
