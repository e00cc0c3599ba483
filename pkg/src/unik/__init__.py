"""Skeleton-based action recognition with learned joint-dependency matrices,
multi-head attention over joints and dilated temporal convolutions, built on a
small numpy autograd core."""

from unik.checkpoint import load_checkpoint, load_pretrained_partial, save_checkpoint
from unik.metrics import Metrics, compute_metrics, fuse_two_stream
from unik.net import NetworkConfig, UnikNet, build_network, count_params, network_forward
from unik.slsu import Slsu, SlsuConfig
from unik.tlsu import Tlsu, TlsuConfig

__version__ = "0.1.0"

__all__ = [
    "load_checkpoint",
    "load_pretrained_partial",
    "save_checkpoint",
    "Metrics",
    "compute_metrics",
    "fuse_two_stream",
    "NetworkConfig",
    "UnikNet",
    "build_network",
    "count_params",
    "network_forward",
    "Slsu",
    "SlsuConfig",
    "Tlsu",
    "TlsuConfig",
]
