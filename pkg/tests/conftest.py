import itertools

from hypothesis import settings

from overlay_phase.core import CrawlRecord, PeerMode, PeerTrace

settings.register_profile("default", deadline=None)
settings.load_profile("default")

_ids = itertools.count()


def make_record(peer="x", t=0, d_l=0, d_u=0, mode="ultra", sw="limewire", leaves=None, ultras=None):
    """Record with ``d_l`` / ``d_u`` synthetic neighbors unless sets are given."""
    if leaves is None:
        leaves = {f"l{i}" for i in range(d_l)}
    if ultras is None:
        ultras = {f"u{i}" for i in range(d_u)}
    return CrawlRecord(peer, t, PeerMode.parse(mode), sw, frozenset(leaves), frozenset(ultras))


def trace_of(states, peer=None, dt=1800, mode="ultra"):
    peer = peer or f"tr{next(_ids)}"
    return PeerTrace(peer, tuple(make_record(peer, i * dt, l, u, mode) for i, (l, u) in enumerate(states)))

