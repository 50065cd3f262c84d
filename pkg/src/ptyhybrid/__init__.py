"""Maximum-likelihood ptychographic reconstruction with a Dai-Yuan
conjugate-gradient solver and a hybrid gather-scatter / all-reduce
multi-worker engine."""

__version__ = "0.1.0"

from .engine import Engine, EngineConfig, run_parallel
from .field import Dataset
from .simkit import SimConfig, simulate
from .solver import SolverConfig, run_reference

__all__ = ["Dataset", "Engine", "EngineConfig", "SimConfig", "SolverConfig",
           "run_parallel", "run_reference", "simulate"]
