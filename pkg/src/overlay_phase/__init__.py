"""Degree dynamics of two-tier unstructured p2p overlays.

Phase-space analytics over crawl traces, trace classification, churn
estimation, double M/M/m/m degree-keeping models with trace generators,
and a slot-protocol overlay simulator.
"""

from .core import (
    CrawlRecord,
    PeerMode,
    PeerTrace,
    PhaseState,
    QueueLimits,
    Rect,
    RegionId,
    SoftwareProfile,
    state_of,
)
from .errors import (
    IngestError,
    InvariantViolation,
    ModelError,
    OverlayPhaseError,
    ReducibleChainError,
)

__version__ = "0.1.0"

__all__ = [
    "CrawlRecord",
    "PeerMode",
    "PeerTrace",
    "PhaseState",
    "QueueLimits",
    "Rect",
    "RegionId",
    "SoftwareProfile",
    "state_of",
    "IngestError",
    "InvariantViolation",
    "ModelError",
    "OverlayPhaseError",
    "ReducibleChainError",
    "__version__",
]
