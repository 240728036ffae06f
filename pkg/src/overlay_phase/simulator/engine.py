"""Event-driven simulation of the slot-based two-tier connection protocol.

Peers are leaves or ultras. Every connection has an ultra at its far end:
leaf-ultra edges occupy a leaf slot on the ultra and an ultra slot on the
leaf, ultra-ultra edges an ultra slot on both. A connection is admitted iff
the target has a free slot of the requested type.

Connections come from two sources. A global Poisson stream proposes
(initiator, target) pairs, with the initiator drawn in proportion to the
per-mode passive rates and the target a uniform alive ultra. A peer below
its target (``L_u`` ultra neighbors for ultras, ``leaf_target`` for leaves)
also runs active-connect passes over all alive ultras in random order.

Event order is (time, kind ordinal, sequence number). Times are hours.
"""

from __future__ import annotations

import enum
import heapq
from typing import Iterator, NamedTuple

import numpy as np

from ..core import CrawlRecord, PeerMode
from ..errors import InvariantViolation
from .config import SimConfig
from .policy import HazardPolicy, PromotionPolicy

LEAF, ULTRA = 0, 1
_MODES = (PeerMode.LEAF, PeerMode.ULTRA)


class EventKind(enum.IntEnum):
    CONNECT_ATTEMPT = 0
    CONNECTION_DROP = 1
    PEER_JOIN = 2
    PEER_LEAVE = 3
    MODE_SWITCH = 4
    CRAWL_TICK = 5


class SimEvent(NamedTuple):
    time: float
    kind: EventKind
    seq: int
    payload: tuple = ()


class Admit(enum.Enum):
    ACCEPTED = "accepted"
    NO_SLOT = "no_slot"
    DEPARTED = "departed"
    NOT_ULTRA = "not_ultra"
    SELF = "self"
    DUPLICATE = "duplicate"
    INITIATOR_FULL = "initiator_full"

    def __bool__(self):
        return self is Admit.ACCEPTED


class _Pool:
    """Set with O(1) add/remove and uniform choice."""

    def __init__(self):
        self.items: list[int] = []
        self.pos: dict[int, int] = {}

    def __len__(self):
        return len(self.items)

    def add(self, x):
        self.pos[x] = len(self.items)
        self.items.append(x)

    def remove(self, x):
        i = self.pos.pop(x)
        last = self.items.pop()
        if last != x:
            self.items[i] = last
            self.pos[last] = i


class Simulation:
    def __init__(self, config: SimConfig, policy: PromotionPolicy | None = None,
                 check_invariants: bool = True, emit_records: bool = True):
        self.config = config
        self.emit_records = emit_records
        self.policy = policy if policy is not None else HazardPolicy(config.promotion_rate,
                                                                      config.kick_out_rate)
        self.check_invariants = check_invariants
        self.rng = np.random.default_rng(config.seed)
        n = config.n_peers
        width = len(str(n - 1))
        self.base_names = [f"p{i:0{width}d}" for i in range(n)]
        self.names = list(self.base_names)
        self.incarnation = [0] * n
        self.alive = [True] * n
        self.mode = [LEAF] * n
        self.leaves: list[set[int]] = [set() for _ in range(n)]
        self.ultras: list[set[int]] = [set() for _ in range(n)]
        self.epoch = [0] * n
        self.pending_active = [False] * n
        self.starved = [False] * n
        self.pools = (_Pool(), _Pool())
        self.edges: dict[tuple[int, int], int] = {}
        self.now = 0.0
        self.stats = dict.fromkeys(
            ("accepts", "drops", "active_attempts", "passive_attempts", "promotions",
             "demotions", "kick_outs", "joins", "leaves", "starved", "events", "ticks",
             "leaf_offers", "ultra_offers", "ultra_samples"), 0)
        self.rejects = {r.value: 0 for r in Admit if r is not Admit.ACCEPTED}
        self.ever_ultra: set[int] = set()
        self._heap: list[SimEvent] = []
        self._seq = 0
        self._edge_serial = 0
        self._passive_version = 0

        n_ultra = int(round(config.ultra_fraction * n))
        initial_ultras = set(self.rng.choice(n, size=n_ultra, replace=False).tolist())
        for p in range(n):
            self.mode[p] = ULTRA if p in initial_ultras else LEAF
            self.pools[self.mode[p]].add(p)
        self.ever_ultra.update(initial_ultras)
        for p in range(n):
            self._schedule_lifecycle(p)
            self._request_active(p)
        self._reschedule_passive()
        dt = config.crawl_interval / 3600.0
        n_ticks = int(np.floor(config.duration / dt + 1e-9)) + 1
        for i in range(n_ticks):
            self._push(config.warmup + i * dt, EventKind.CRAWL_TICK, (i,))
        self.end_time = config.warmup + (n_ticks - 1) * dt

    # -- bookkeeping ---------------------------------------------------------

    def _push(self, time, kind, payload=()):
        self._seq += 1
        heapq.heappush(self._heap, SimEvent(time, kind, self._seq, payload))

    def _exp(self, mean):
        return float(self.rng.exponential(mean))

    def degree(self, p) -> tuple[int, int]:
        return len(self.leaves[p]), len(self.ultras[p])

    def target_degree(self, p) -> int:
        return self.config.limits.L_u if self.mode[p] == ULTRA else self.config.leaf_target

    def ultra_capacity(self, p) -> int:
        return self.config.limits.B_u if self.mode[p] == ULTRA else self.config.leaf_max_ultra

    def _side(self, p, other):
        return self.ultras[p] if self.mode[other] == ULTRA else self.leaves[p]

    def connected(self, a, b) -> bool:
        return (min(a, b), max(a, b)) in self.edges

    def _connect(self, a, b):
        self._side(a, b).add(b)
        self._side(b, a).add(a)
        self._edge_serial += 1
        self.edges[(min(a, b), max(a, b))] = self._edge_serial
        self.stats["accepts"] += 1
        both_ultra = self.mode[a] == ULTRA and self.mode[b] == ULTRA
        life = self.config.ultra_connection_life if both_ultra else self.config.leaf_connection_life
        self._push(self.now + self._exp(life), EventKind.CONNECTION_DROP, (a, b, self._edge_serial))

    def _disconnect(self, a, b):
        del self.edges[(min(a, b), max(a, b))]
        self._side(a, b).discard(b)
        self._side(b, a).discard(a)
        self.stats["drops"] += 1

    def _disconnect_all(self, p):
        others = sorted(self.leaves[p] | self.ultras[p])
        for q in others:
            self._disconnect(p, q)
        for q in others:
            self._request_active(q)

    def _below_target(self, p):
        return self.alive[p] and len(self.ultras[p]) < self.target_degree(p)

    def _request_active(self, p):
        if self.pending_active[p] or not self._below_target(p):
            return
        rate = self.config.active_connect_rate
        if rate <= 0:
            return
        self.pending_active[p] = True
        self._push(self.now + self._exp(1.0 / rate), EventKind.CONNECT_ATTEMPT,
                   ("active", p, self.epoch[p]))

    def _passive_rate(self):
        c = self.config
        return c.attempt_scale * (c.passive_rate_ultra * len(self.pools[ULTRA])
                                  + c.passive_rate_leaf * len(self.pools[LEAF]))

    def _reschedule_passive(self):
        # memoryless: redrawing on every population change keeps the stream exact
        self._passive_version += 1
        rate = self._passive_rate()
        if rate > 0:
            self._push(self.now + self._exp(1.0 / rate), EventKind.CONNECT_ATTEMPT,
                       ("passive", self._passive_version))

    def _schedule_lifecycle(self, p):
        c = self.config
        ep = self.epoch[p]
        if c.churn:
            life = c.ultra_peer_life if self.mode[p] == ULTRA else c.leaf_peer_life
            self._push(self.now + self._exp(life), EventKind.PEER_LEAVE, (p, ep))
        if self.mode[p] == LEAF:
            delay = self.policy.promotion_delay(p, self.now, self.rng)
            if delay is not None:
                self._push(self.now + delay, EventKind.MODE_SWITCH, ("promote", p, ep))
        else:
            self._reschedule_kick(p)

    def _reschedule_kick(self, p):
        delay = self.policy.kick_out_delay(p, self.now, self.rng)
        if delay is not None:
            self._push(self.now + delay, EventKind.MODE_SWITCH, ("kick", p, self.epoch[p]))

    # -- protocol ------------------------------------------------------------

    def admit(self, target, initiator) -> Admit:
        """Offer a connection from ``initiator`` to ``target``; connect on accept.

        The connection type follows the initiator's mode: a leaf asks for a
        leaf slot, an ultra for an ultra slot.
        """
        if not self.alive[target] or not self.alive[initiator]:
            result = Admit.DEPARTED
        elif target == initiator:
            result = Admit.SELF
        elif self.mode[target] != ULTRA:
            result = Admit.NOT_ULTRA
        elif self.connected(target, initiator):
            result = Admit.DUPLICATE
        elif len(self.ultras[initiator]) >= self.ultra_capacity(initiator):
            result = Admit.INITIATOR_FULL
        elif self.mode[initiator] == LEAF:
            result = Admit.ACCEPTED if len(self.leaves[target]) < self.config.limits.B_l else Admit.NO_SLOT
        else:
            result = Admit.ACCEPTED if len(self.ultras[target]) < self.config.limits.B_u else Admit.NO_SLOT
        if result in (Admit.ACCEPTED, Admit.NO_SLOT) and self.now >= self.config.warmup:
            # offers that reached the target's slot queue, counted over the crawl window
            self.stats["leaf_offers" if self.mode[initiator] == LEAF else "ultra_offers"] += 1
        if result:
            self._connect(initiator, target)
        else:
            self.rejects[result.value] += 1
        return result

    def step_active_connect(self, p) -> int:
        """One active-connect pass; returns the number of attempts issued.

        Candidates are all alive ultras in random order. The pass stops once
        the peer reaches its target degree or the candidates run out, and in
        the latter case the peer is flagged starved.
        """
        need = self.target_degree(p) - len(self.ultras[p])
        if not self.alive[p] or need <= 0:
            self.starved[p] = False
            return 0
        pool = self.pools[ULTRA].items
        attempts = 0
        if pool:
            order = self.rng.permutation(len(pool)).tolist()
            snapshot = [pool[i] for i in order]
            for q in snapshot:
                if q == p or q in self.ultras[p]:
                    continue
                attempts += 1
                if self.admit(q, p):
                    need -= 1
                    if need == 0:
                        break
        self.stats["active_attempts"] += attempts
        self.starved[p] = need > 0
        if self.starved[p]:
            self.stats["starved"] += 1
        return attempts

    def mode_rules(self, p, trigger: str | None = None) -> str | None:
        """The mode switch due for ``p``: 'promote', 'demote', 'kick' or None."""
        if not self.alive[p]:
            return None
        if self.mode[p] == LEAF:
            return "promote" if trigger == "promote" else None
        if trigger == "kick":
            # only a redundant ultra, one short of leaves, is kicked out
            if len(self.leaves[p]) < self.config.redundant_leaves:
                return "kick"
            self._reschedule_kick(p)
            return None
        if self.starved[p] and len(self.ultras[p]) < self.config.core_threshold:
            return "demote"
        return None

    def switch_mode(self, p, new_mode: int):
        """Drop every connection of ``p`` and move it to ``new_mode``."""
        self._disconnect_all(p)
        self.pools[self.mode[p]].remove(p)
        self.mode[p] = new_mode
        self.pools[new_mode].add(p)
        self.epoch[p] += 1
        self.pending_active[p] = False
        self.starved[p] = False
        if new_mode == ULTRA:
            self.ever_ultra.add(p)
        self._schedule_lifecycle(p)
        self._reschedule_passive()

    def _apply_switch(self, p, switch):
        if switch == "promote":
            self.stats["promotions"] += 1
            self.switch_mode(p, ULTRA)
        else:
            self.stats["demotions" if switch == "demote" else "kick_outs"] += 1
            self.switch_mode(p, LEAF)
        self._active_pass(p)

    def _active_pass(self, p):
        self.step_active_connect(p)
        switch = self.mode_rules(p)
        if switch is not None:
            self._apply_switch(p, switch)
            return
        self._request_active(p)

    # -- event handlers ------------------------------------------------------

    def _on_connect_attempt(self, payload):
        if payload[0] == "active":
            _, p, ep = payload
            if ep != self.epoch[p] or not self.alive[p]:
                return
            self.pending_active[p] = False
            self._active_pass(p)
            return
        if payload[1] != self._passive_version:
            return
        self._reschedule_passive()
        c = self.config
        n_u, n_l = len(self.pools[ULTRA]), len(self.pools[LEAF])
        w_u = c.passive_rate_ultra * n_u
        w_l = c.passive_rate_leaf * n_l
        if n_u == 0 or w_u + w_l <= 0:
            return
        pool = self.pools[ULTRA] if self.rng.random() * (w_u + w_l) < w_u else self.pools[LEAF]
        initiator = pool.items[int(self.rng.integers(len(pool)))]
        target = self.pools[ULTRA].items[int(self.rng.integers(n_u))]
        self.stats["passive_attempts"] += 1
        self.admit(target, initiator)

    def _on_drop(self, payload):
        a, b, serial = payload
        if self.edges.get((min(a, b), max(a, b))) != serial:
            return
        self._disconnect(a, b)
        self._request_active(a)
        self._request_active(b)

    def _on_leave(self, payload):
        p, ep = payload
        if ep != self.epoch[p] or not self.alive[p]:
            return
        self.stats["leaves"] += 1
        self._disconnect_all(p)
        self.alive[p] = False
        self.pools[self.mode[p]].remove(p)
        self.epoch[p] += 1
        self.pending_active[p] = False
        self.starved[p] = False
        self._push(self.now + self._exp(self.config.offline_time), EventKind.PEER_JOIN, (p,))
        self._reschedule_passive()

    def _on_join(self, payload):
        (p,) = payload
        self.stats["joins"] += 1
        if self.config.fresh_identity:
            self.incarnation[p] += 1
            self.names[p] = f"{self.base_names[p]}.{self.incarnation[p]}"
        self.alive[p] = True
        self.mode[p] = LEAF
        self.pools[LEAF].add(p)
        self.epoch[p] += 1
        self._schedule_lifecycle(p)
        self._reschedule_passive()
        self._active_pass(p)

    def _on_mode_switch(self, payload):
        trigger, p, ep = payload
        if ep != self.epoch[p]:
            return
        switch = self.mode_rules(p, trigger)
        if switch is not None:
            self._apply_switch(p, switch)

    def _on_tick(self, payload) -> list[CrawlRecord]:
        self.stats["ticks"] += 1
        if payload[0] == 0:
            # ever-ultra counts from the start of the crawl window
            self.ever_ultra = {p for p in self.pools[ULTRA].items}
        if self.check_invariants:
            self.verify()
        if not self.emit_records:
            return []
        t = int(round((self.now - self.config.warmup) * 3600))
        names = self.names
        out = []
        for p in range(self.config.n_peers):
            if not self.alive[p]:
                continue
            if self.mode[p] == ULTRA:
                self.stats["ultra_samples"] += 1
            out.append(CrawlRecord(
                names[p], t, _MODES[self.mode[p]], self.config.software,
                frozenset(names[q] for q in self.leaves[p]),
                frozenset(names[q] for q in self.ultras[p]),
            ))
        return out

    # -- driver --------------------------------------------------------------

    def verify(self):
        """Raise InvariantViolation on asymmetric edges, slot overflow or lost edges."""
        lim = self.config.limits
        for p in range(self.config.n_peers):
            lv, uv = self.leaves[p], self.ultras[p]
            if not self.alive[p]:
                if lv or uv:
                    raise InvariantViolation(f"departed peer {p} holds connections")
                continue
            if self.mode[p] == ULTRA:
                if len(lv) > lim.B_l or len(uv) > lim.B_u:
                    raise InvariantViolation(f"ultra {p} exceeds its slots: {len(lv)}, {len(uv)}")
            elif lv or len(uv) > self.config.leaf_max_ultra:
                raise InvariantViolation(f"leaf {p} exceeds its slots")
            for q in uv:
                if self.mode[q] != ULTRA or p not in self._side(q, p):
                    raise InvariantViolation(f"edge {p}-{q} is not symmetric")
            for q in lv:
                if self.mode[q] != LEAF or p not in self.ultras[q]:
                    raise InvariantViolation(f"edge {p}-{q} is not symmetric")
        if self.stats["accepts"] - self.stats["drops"] != len(self.edges):
            raise InvariantViolation("accepted minus dropped connections != live edges")

    def events(self) -> Iterator[SimEvent]:
        """Process events in order, yielding each one after it is applied."""
        handlers = {
            EventKind.CONNECT_ATTEMPT: self._on_connect_attempt,
            EventKind.CONNECTION_DROP: self._on_drop,
            EventKind.PEER_JOIN: self._on_join,
            EventKind.PEER_LEAVE: self._on_leave,
            EventKind.MODE_SWITCH: self._on_mode_switch,
        }
        heap = self._heap
        while heap and heap[0].time <= self.end_time:
            ev = heapq.heappop(heap)
            self.now = ev.time
            self.stats["events"] += 1
            if ev.kind is EventKind.CRAWL_TICK:
                self.last_records = self._on_tick(ev.payload)
            else:
                handlers[ev.kind](ev.payload)
            yield ev

    def iter_records(self) -> Iterator[CrawlRecord]:
        for ev in self.events():
            if ev.kind is EventKind.CRAWL_TICK:
                yield from self.last_records

    def effective_rates(self) -> dict:
        """Per-interval arrival and drop parameters the degree processes saw.

        ``lam`` counts offers reaching an ultra's slot queue per ultra sample;
        an ultra-ultra offer is an arrival at both of its endpoints. ``mu``
        is the chance that a connection lives less than one crawl interval.
        """
        c = self.config
        n = self.stats["ultra_samples"]
        dt = c.crawl_interval / 3600.0
        return {
            "leaf": {"lam": self.stats["leaf_offers"] / n if n else float("nan"),
                     "mu": float(-np.expm1(-dt / c.leaf_connection_life))},
            "ultra": {"lam": 2 * self.stats["ultra_offers"] / n if n else float("nan"),
                      "mu": float(-np.expm1(-dt / c.ultra_connection_life))},
        }

    @property
    def ever_ultra_share(self) -> float:
        return len(self.ever_ultra) / self.config.n_peers


def run(config: SimConfig, policy: PromotionPolicy | None = None, check_invariants: bool = True) -> list[CrawlRecord]:
    """Simulate and return the crawl records of every alive peer at every tick."""
    return list(Simulation(config, policy, check_invariants).iter_records())
