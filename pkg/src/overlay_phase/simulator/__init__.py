from .config import SimConfig, config_from_dict, load_config
from .engine import Admit, EventKind, SimEvent, Simulation, run
from .policy import HazardPolicy, NoModeChange, PromotionPolicy

__all__ = [
    "Admit",
    "EventKind",
    "HazardPolicy",
    "NoModeChange",
    "PromotionPolicy",
    "SimConfig",
    "SimEvent",
    "Simulation",
    "config_from_dict",
    "load_config",
    "run",
]
