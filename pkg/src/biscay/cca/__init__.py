"""Congestion-control algorithms driven by simulator events."""

from .base import (
    DEFAULT_MSS,
    CcState,
    CongestionControl,
    CongestionEvent,
    EventKind,
    FlowId,
    FlowRegistry,
    FlowState,
    MaxFilter,
    MinRttFilter,
    Protocol,
    bdp_cwnd,
    bw_split_policy,
    min_rtt_update,
    slow_start_step,
)
from .bbr import BbrLite, BbrMode
from .biscay import Biscay, E2eEstimator, KpiFeed
from .cubic import Cubic, cubic_k, cubic_window
from .reno import Reno

CCA_NAMES = ("biscay", "bbr-lite", "cubic", "reno")


def make_cca(name: str, **kwargs) -> CongestionControl:
    """Instantiate a CCA by its scenario-config name."""
    classes = {"biscay": Biscay, "bbr-lite": BbrLite, "cubic": Cubic, "reno": Reno}
    try:
        cls = classes[name]
    except KeyError:
        raise ValueError(f"unknown CCA {name!r}; expected one of {', '.join(CCA_NAMES)}") from None
    return cls(**kwargs)


__all__ = [
    "CCA_NAMES", "DEFAULT_MSS", "BbrLite", "BbrMode", "Biscay", "CcState", "CongestionControl",
    "CongestionEvent", "Cubic", "E2eEstimator", "EventKind", "FlowId", "FlowRegistry", "FlowState", "KpiFeed",
    "MaxFilter", "MinRttFilter", "Protocol", "Reno", "bdp_cwnd", "bw_split_policy", "cubic_k",
    "cubic_window", "make_cca", "min_rtt_update", "slow_start_step",
]
