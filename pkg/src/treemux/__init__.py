"""Single-photon probability of spatially multiplexed heralded sources built on
complete and incomplete binary-tree multiplexers."""

__version__ = "0.1.0"

from .engine import (
    DetectionStrategy,
    OutputDistribution,
    SourceConfig,
    output_distribution,
    single_photon_probability,
)
from .optimizer import OptimizationOutcome, PerNOutcome, optimize_lambda, optimize_n
from .topology import ArmTransmissions, Kind, LossModel, TopologySpec, build_arm_transmissions

__all__ = [
    "__version__",
    "ArmTransmissions",
    "DetectionStrategy",
    "Kind",
    "LossModel",
    "OptimizationOutcome",
    "OutputDistribution",
    "PerNOutcome",
    "SourceConfig",
    "TopologySpec",
    "build_arm_transmissions",
    "optimize_lambda",
    "optimize_n",
    "output_distribution",
    "single_photon_probability",
]
