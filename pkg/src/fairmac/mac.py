"""Slotted MAC that schedules transmissions from auction outcomes.

Time is divided into frames of v slots.  Each node turns its current claim
(or the offers it holds, in eager mode) into a persistence p, draws k slots
per frame so that E[k]/v = p, and transmits in those slots when it has
traffic.  Claims and offers ride in a four byte header on every packet, so
the auction signalling costs nothing beyond existing transmissions; nodes
with nothing to send stay silent unless an override forces keepalives.

Overrides: an isolated node, or one that just met a new neighbour, caps its
persistence at p_default so others can break in; a node whose local auction
is oversubscribed keeps at least p_min and pads with dummy packets so its
slice of the channel stays visibly claimed.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Optional

from .auction import Auctioneer, Bidder, decode, encode, encode_floor

LEVEL_HORIZON = 0.02  # seconds of queue the level term is sized against
DISCOVERY_WINDOW = 0.08  # one frame of p_default after meeting a neighbour

_PERSIST_EPS = 1e-12


@dataclass
class NodeConfig:
    v: int = 100
    slot_len: float = 800e-6
    p_default: float = 0.05
    p_min: float = 0.01
    t_lost_nbr: float = 0.5
    persistence_mode: str = "eager"  # or "lazy"
    receiver_mode: str = "physical"  # or "mac"
    weighted: bool = False
    max_retries: int = 10
    queue_capacity: int = 500
    demand_mode: str = "configured"  # or "estimated"

    def __post_init__(self):
        if self.v < 1:
            raise ValueError("v must be at least 1")
        if not 0.0 <= self.p_min <= self.p_default <= 1.0:
            raise ValueError("need 0 <= p_min <= p_default <= 1")
        if self.t_lost_nbr <= 0.0:
            raise ValueError("t_lost_nbr must be positive")
        if self.persistence_mode not in ("lazy", "eager"):
            raise ValueError(f"unknown persistence mode {self.persistence_mode!r}")
        if self.receiver_mode not in ("physical", "mac"):
            raise ValueError(f"unknown receiver mode {self.receiver_mode!r}")
        if self.demand_mode not in ("configured", "estimated"):
            raise ValueError(f"unknown demand mode {self.demand_mode!r}")
        if self.max_retries < 0 or self.queue_capacity < 1:
            raise ValueError("bad retry or queue limits")


@dataclass
class MacPacket:
    src: Hashable
    dst: Optional[Hashable]  # None is a broadcast keepalive
    size: int = 1500
    offer_raw: int = 0
    claim_raw: int = 0
    weight: int = 1
    retry: int = 0
    kind: str = "data"  # or "dummy"
    enqueued_at: float = 0.0


def pack_header(offer_raw: int, claim_raw: int, weight: int = 1) -> bytes:
    if not 0 <= offer_raw <= 255 or not 0 <= claim_raw <= 255:
        raise ValueError("wire bytes out of range")
    if not 1 <= weight <= 16:
        raise ValueError(f"weight {weight} outside 1..16")
    return bytes((offer_raw, claim_raw, weight - 1, 0))


def unpack_header(raw: bytes):
    if len(raw) != 4:
        raise ValueError("header is exactly four bytes")
    return raw[0], raw[1], (raw[2] & 0x0F) + 1


def draw_slot_count(p: float, v: int, rng: random.Random) -> int:
    """k = floor(pv)+1 with probability pv - floor(pv), else floor(pv)."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"persistence {p!r} outside [0, 1]")
    whole = int(p * v + 1e-9)
    frac = p * v - whole
    k = whole + 1 if rng.random() < frac else whole
    return min(k, v)


def build_schedule(k: int, v: int, rng: random.Random) -> frozenset:
    if not 0 <= k <= v:
        raise ValueError(f"cannot place {k} slots in a frame of {v}")
    return frozenset(rng.sample(range(v), k))


def prorated_count(k: int, remaining: int, v: int) -> int:
    # mid-frame target: keep the expected occupancy of the rest of the frame
    return min(remaining, round(k * remaining / v))


def compute_persistence(claim: float, offers, mode: str, weight: int = 1) -> float:
    offers = list(offers)
    if mode == "lazy" or not offers:
        base = claim
    else:
        base = min(offers)
    return min(1.0, weight * base)


def apply_overrides(p: float, *, isolated: bool = False, discovery: bool = False,
                    overloaded: bool = False, announce: bool = False,
                    p_default: float = 0.05, p_min: float = 0.01):
    if isolated or discovery:
        p = min(p, p_default)
    dummy = False
    if overloaded:
        p = max(p, p_min)
        dummy = True
    if announce:
        # a changed offer or claim is only news once it has been on the air,
        # and broadcasts carry no ack; repeat at the default rate so a lone
        # collision cannot bury the update
        p = max(p, p_default)
        dummy = True
    return p, dummy


def estimate_demand(enqueue_rate: float, queue_len: int, slot_len: float) -> float:
    w_enqueue = enqueue_rate * slot_len
    w_level = (queue_len / LEVEL_HORIZON) * slot_len
    return min(1.0, w_enqueue + w_level)


class MacNode:
    """One node's MAC runtime: queue, schedule, neighbour table, and the two
    local auction machines.  The host calls begin_slot, transmit_decision,
    on_hear, on_ack_result and enqueue; everything else is internal."""

    def __init__(self, ident, config: Optional[NodeConfig] = None,
                 demand: float = 0.0, weight: int = 1, seed: int = 0):
        self.ident = ident
        self.config = config or NodeConfig()
        self.weight = int(weight)
        self.rng = random.Random(seed)
        self.bidder = Bidder(ident, magnitude=min(1.0, demand),
                             auctions=[ident], weight=self.weight)
        self.auctioneer = Auctioneer(ident, capacity=1.0, bidders=[ident])
        self.demand = min(1.0, demand)
        self.neighbours: Dict[Hashable, float] = {}
        self.queue: List[MacPacket] = []
        self.persistence = 0.0
        self.schedule: frozenset = frozenset()
        self.slot_quota = 0
        self.dummy_flag = False
        self.now = 0.0
        self.delivered = 0
        self.delay_sum = 0.0
        self.delay_sq_sum = 0.0
        self.sent_data = 0
        self.sent_dummy = 0
        self.drops_retry = 0
        self.drops_queue = 0
        self._position = 0
        self._discovery_until = -1.0
        self._outbound: Dict[Hashable, float] = {}
        self._rr = 0
        self._arrivals = deque()
        self._announced: Optional[tuple] = None  # header pair last transmitted
        self._last_header: Optional[tuple] = None
        self._header_changed_at = float("-inf")
        self._pump()
        self._refresh(force=True)

    # ------------------------------------------------------------ helpers

    def _pump(self):
        # keep the co-located bidder and auctioneer mutually current; they
        # exchange grid values exactly as a neighbour would hear them
        for _ in range(8):
            before = (self.bidder.claim, self.auctioneer.offer)
            self.auctioneer.receive_claim(
                self.ident, decode(encode(self.bidder.claim)), self.bidder.weight)
            self.bidder.receive_offer(
                self.ident, decode(encode_floor(self.auctioneer.offer)))
            if (self.bidder.claim, self.auctioneer.offer) == before:
                break

    def _visible_offers(self):
        return [v for j, v in self.bidder.offers.items() if j in self.bidder.auctions]

    def _overloaded(self) -> bool:
        total = sum(self.auctioneer.claims.get(b, 0.0) * self.auctioneer.weights.get(b, 1)
                    for b in self.auctioneer.bidders)
        return total > self.auctioneer.capacity + 1e-9

    def _refresh(self, force: bool = False):
        cfg = self.config
        base = compute_persistence(self.bidder.claim, self._visible_offers(),
                                   cfg.persistence_mode, self.weight)
        header = (encode_floor(self.auctioneer.offer), encode(self.bidder.claim))
        if header != self._last_header:
            self._last_header = header
            self._header_changed_at = self.now
        # broadcasts carry no ack, so one transmission proves nothing; keep
        # repeating the news for a couple of frames after each change
        announce = bool(self.neighbours) and (
            header != self._announced
            or self.now - self._header_changed_at <= 2 * cfg.v * cfg.slot_len)
        p, dummy = apply_overrides(
            base,
            isolated=not self.neighbours,
            discovery=self.now < self._discovery_until,
            overloaded=self._overloaded(),
            announce=announce,
            p_default=cfg.p_default,
            p_min=cfg.p_min,
        )
        self.dummy_flag = dummy
        if force or abs(p - self.persistence) > _PERSIST_EPS:
            self.persistence = p
            self.slot_quota = draw_slot_count(p, cfg.v, self.rng)
            if self._position == 0 or force:
                self.schedule = build_schedule(self.slot_quota, cfg.v, self.rng)
            else:
                remaining = cfg.v - self._position
                want = prorated_count(self.slot_quota, remaining, cfg.v)
                picks = self.rng.sample(range(self._position, cfg.v), want)
                self.schedule = frozenset(picks)

    def _update_receivers(self):
        if self.config.receiver_mode == "physical":
            desired = {self.ident} | set(self.neighbours)
        else:
            horizon = self.now - self.config.t_lost_nbr
            desired = {self.ident} | {
                d for d, t in self._outbound.items()
                if d in self.neighbours and t >= horizon
            }
        for j in sorted(self.bidder.auctions - desired, key=repr):
            self.bidder.leave_auction(j)
        for j in sorted(desired - self.bidder.auctions, key=repr):
            self.bidder.join_auction(j)

    def _purge_neighbours(self):
        horizon = self.now - self.config.t_lost_nbr
        gone = [n for n, t in self.neighbours.items() if t < horizon]
        for n in gone:
            del self.neighbours[n]
            self.auctioneer.leave(n)
            self._outbound.pop(n, None)
        if gone:
            self._update_receivers()
            self._pump()

    def _pick_destination(self) -> Optional[Hashable]:
        if not self.neighbours:
            return None
        targets = sorted(self.neighbours, key=repr)
        dst = targets[self._rr % len(targets)]
        self._rr += 1
        return dst

    def _estimate(self):
        horizon = self.now - DISCOVERY_WINDOW
        while self._arrivals and self._arrivals[0] < horizon:
            self._arrivals.popleft()
        rate = len(self._arrivals) / DISCOVERY_WINDOW
        w = estimate_demand(rate, len(self.queue), self.config.slot_len)
        self.set_demand(w)

    # ------------------------------------------------------------ slot API

    def begin_slot(self, slot: int):
        self.now = slot * self.config.slot_len
        self._position = slot % self.config.v
        self._purge_neighbours()
        if self._position == 0:
            if self.config.demand_mode == "estimated":
                self._estimate()
            # receivers decay as outbound traffic moves on; reconcile at
            # frame pace rather than every slot
            self._update_receivers()
            self._pump()
            self._refresh(force=True)
        else:
            self._refresh()

    def transmit_decision(self, slot: int) -> Optional[MacPacket]:
        if slot % self.config.v not in self.schedule:
            return None
        offer_raw = encode_floor(self.auctioneer.offer)
        claim_raw = encode(self.bidder.claim)
        if self.queue:
            pkt = self.queue[0]
            dst = pkt.dst
            if dst is None or dst not in self.neighbours:
                dst = self._pick_destination()
            if dst is None:
                # nobody to address: burn the slot as a discovery keepalive
                if self.demand > 0.0 or self.queue:
                    self.sent_dummy += 1
                    self._announced = (offer_raw, claim_raw)
                    return MacPacket(self.ident, None, 64, offer_raw, claim_raw,
                                     self.weight, kind="dummy")
                return None
            self.queue.pop(0)
            pkt.dst = dst
            pkt.offer_raw = offer_raw
            pkt.claim_raw = claim_raw
            pkt.weight = self.weight
            self._announced = (offer_raw, claim_raw)
            self._outbound[dst] = self.now
            # a first send to dst makes it a receiver; rejoin its auction now,
            # not at the next discovery event
            if (self.config.receiver_mode == "mac"
                    and dst not in self.bidder.auctions):
                self._update_receivers()
                self._pump()
            self.sent_data += 1
            return pkt
        if self.dummy_flag:
            dst = self._pick_destination()
            self.sent_dummy += 1
            self._announced = (offer_raw, claim_raw)
            return MacPacket(self.ident, dst, 64, offer_raw, claim_raw,
                             self.weight, kind="dummy")
        if not self.neighbours and self.demand > 0.0:
            self.sent_dummy += 1
            self._announced = (offer_raw, claim_raw)
            return MacPacket(self.ident, None, 64, offer_raw, claim_raw,
                             self.weight, kind="dummy")
        return None

    def on_ack_result(self, pkt: MacPacket, acked: bool):
        if pkt.kind != "data":
            return
        if acked:
            self.delivered += 1
            delay = self.now - pkt.enqueued_at
            self.delay_sum += delay
            self.delay_sq_sum += delay * delay
            return
        if pkt.retry >= self.config.max_retries:
            self.drops_retry += 1
            return
        pkt.retry += 1
        self.queue.insert(0, pkt)

    def on_hear(self, slot: int, src, offer_raw: Optional[int] = None,
                claim_raw: Optional[int] = None, weight: int = 1):
        t = max(self.now, slot * self.config.slot_len)
        fresh = src not in self.neighbours
        self.neighbours[src] = t
        if fresh:
            self._discovery_until = t + DISCOVERY_WINDOW
            self.auctioneer.join(src)
            self._update_receivers()
        if offer_raw is not None:
            self.bidder.receive_offer(src, decode(offer_raw))
        if claim_raw is not None:
            self.auctioneer.receive_claim(src, decode(claim_raw), weight)
        self._pump()
        self._refresh()

    def enqueue(self, slot: int, dst: Optional[Hashable] = None, size: int = 1500):
        t = max(self.now, slot * self.config.slot_len)
        self._arrivals.append(t)
        if dst is not None:
            self._outbound[dst] = t
            self._update_receivers()
            self._pump()
        if len(self.queue) >= self.config.queue_capacity:
            self.drops_queue += 1
            return
        self.queue.append(MacPacket(self.ident, dst, size, enqueued_at=t))

    def set_demand(self, demand: float):
        self.demand = min(1.0, max(0.0, demand))
        if self.bidder.weight != self.weight:
            self.bidder.set_weight(self.weight)
        self.bidder.set_demand(self.demand)
        self._pump()
        self._refresh()
