"""Mode-change policies.

The engine asks a policy for the waiting time until a leaf's promotion and
until an ultra's kick-out; ``None`` means never. Delays are drawn again
whenever a peer changes mode or rejoins, which is exact for hazard-rate
policies.
"""

from __future__ import annotations

import math
from typing import Protocol


class PromotionPolicy(Protocol):
    def promotion_delay(self, peer: int, now: float, rng) -> float | None: ...

    def kick_out_delay(self, peer: int, now: float, rng) -> float | None: ...


class HazardPolicy:
    """Constant per-hour hazards for promotion and kick-out."""

    def __init__(self, promotion_rate: float, kick_out_rate: float = 0.0):
        self.promotion_rate = promotion_rate
        self.kick_out_rate = kick_out_rate

    @staticmethod
    def _draw(rate, rng):
        if rate <= 0:
            return None
        return float(rng.exponential(1.0 / rate))

    def promotion_delay(self, peer, now, rng):
        return self._draw(self.promotion_rate, rng)

    def kick_out_delay(self, peer, now, rng):
        return self._draw(self.kick_out_rate, rng)

    def __repr__(self):
        return f"HazardPolicy(promotion_rate={self.promotion_rate}, kick_out_rate={self.kick_out_rate})"


class NoModeChange:
    def promotion_delay(self, peer, now, rng):
        return None

    def kick_out_delay(self, peer, now, rng):
        return None


def expected_ever_ultra(n_leaf: int, n_ultra: int, rate: float, hours: float) -> float:
    """Share of peers ever ultra if leaves promote at ``rate`` and never return."""
    total = n_leaf + n_ultra
    return (n_ultra + n_leaf * (1 - math.exp(-rate * hours))) / total if total else 0.0
