"""Split learning with pigeonhole cluster selection against malicious clients."""

from .adversary import BehaviorSpec
from .data import DatasetBundle, Samples
from .ledger import TrafficLedger
from .nn_core import LayerSpec
from .pigeon import ClusterAssignment, RoundOutcome, SimulationState, partition_clients, run_global_round
from .split_model import SplitArch, SplitParams

__all__ = [
    "BehaviorSpec", "ClusterAssignment", "DatasetBundle", "LayerSpec", "RoundOutcome", "Samples",
    "SimulationState", "SplitArch", "SplitParams", "TrafficLedger", "partition_clients", "run_global_round",
]
