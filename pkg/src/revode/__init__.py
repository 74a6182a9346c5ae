"""Stable reversible residual networks built from ODE discretizations."""
from .blocks import BlockParams, block_forward, block_inverse
from .network import ArchSpec, CheckpointSet, Network, init_network, memory_report, net_backward, net_forward
from .stability import StabilityReport
from .train import TrainConfig

__all__ = [
    "ArchSpec",
    "BlockParams",
    "CheckpointSet",
    "Network",
    "StabilityReport",
    "TrainConfig",
    "block_forward",
    "block_inverse",
    "init_network",
    "memory_report",
    "net_backward",
    "net_forward",
]
