"""Neural optimal transport with hypernetwork-generated convex potentials.

A transformer embeds each empirical distribution into a context vector; two
hypernetworks map that vector to the weights of input-convex potential
networks whose gradients are the forward and inverse transport maps.
"""

from .diffcore import DTYPE, DivergenceError
from .embedder import EmpiricalDistribution, Embedder
from .icnn import IcnnParams, IcnnSpec, default_spec, icnn_forward, transport_map
from .hypernet import HyperNet
from .solvers import SolverConfig, fit, mmb_loss
from .trainer import HotetModel, TrainConfig, finetune, predict, train_multi, train_pair

__version__ = "0.1.0"

__all__ = [
    "DTYPE", "DivergenceError", "EmpiricalDistribution", "Embedder", "IcnnParams", "IcnnSpec", "default_spec",
    "icnn_forward", "transport_map", "HyperNet", "SolverConfig", "fit", "mmb_loss", "HotetModel", "TrainConfig",
    "finetune", "predict", "train_multi", "train_pair",
]
