"""Physics-informed neural nets for control: training, self-loop prediction and MPC."""

from . import autodiff, metrics, mpc, network, physics, sampling, simulator, training
from .errors import (
    ConfigError,
    ConstructionError,
    ContractError,
    DomainError,
    IntegrationError,
    PincError,
    RegistryError,
    SchemaError,
    TrainingDiverged,
)

__version__ = "0.1.0"

__all__ = [
    "autodiff",
    "metrics",
    "mpc",
    "network",
    "physics",
    "sampling",
    "simulator",
    "training",
    "ConfigError",
    "ConstructionError",
    "ContractError",
    "DomainError",
    "IntegrationError",
    "PincError",
    "RegistryError",
    "SchemaError",
    "TrainingDiverged",
]
