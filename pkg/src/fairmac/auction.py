"""Distributed auction that converges on the max-min fair allocation.

Each node runs a bidder for its own demand and an auctioneer for the airtime
around it.  A bidder claims the least of what its auctions offer, capped by
its demand; an auctioneer offers each bidder an equal split of its capacity
after setting aside bidders that cannot use a full share.  Claims and offers
travel as single bytes (value times 255), so state machines optionally
quantize at emission.

Offer advertisements round down (``encode_floor``) while claims round to
nearest (``encode``).  Advertising the floor means a claim echoing the offer
never looks "constrained elsewhere" on re-examination (the comparison is made
against the advertised grid value, which the echo equals bit for bit), so the
claim/offer exchange settles instead of hunting one quantum up and down, and
the advertised level can never oversubscribe the capacity.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Dict, Hashable, Iterable, Optional

from .allocation import AllocationProblem

WIRE_STEPS = 255

_RANGE_EPS = 1e-9

# Unquantized suppression deadband.  Asynchronous echo chains decay
# geometrically, so waiting for bit-exact repetition means tens of extra
# round trips; stopping below this threshold perturbs the fixed point by at
# most the network diameter times 1e-12, far inside any tolerance in use.
_EMIT_EPS = 1e-12


def _changed(payload, last):
    if last is None:
        return True
    if isinstance(payload, int) or isinstance(last, int):
        return payload != last
    return abs(payload - last) > _EMIT_EPS


def encode(x: float) -> int:
    """Value in [0, 1] to a wire byte, nearest grid point."""
    if not -_RANGE_EPS <= x <= 1.0 + _RANGE_EPS:
        raise ValueError(f"value {x!r} outside [0, 1]")
    return round(min(max(x, 0.0), 1.0) * WIRE_STEPS)

def encode_floor(x: float) -> int:
    """Value in [0, 1] to a wire byte, rounding down (for advertisements)."""
    if not -_RANGE_EPS <= x <= 1.0 + _RANGE_EPS:
        raise ValueError(f"value {x!r} outside [0, 1]")
    # the nudge keeps exact grid points stable under float noise
    return int(min(max(x, 0.0), 1.0) * WIRE_STEPS + 1e-9)

def decode(raw: int) -> float:
    if not isinstance(raw, int) or not 0 <= raw <= WIRE_STEPS:
        raise ValueError(f"wire byte {raw!r} outside 0..{WIRE_STEPS}")
    return raw / WIRE_STEPS


@dataclass(frozen=True)
class AuctionMessage:
    kind: str  # "offer" or "claim"
    sender: Hashable
    value: float
    raw: Optional[int] = None
    weight: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("offer", "claim"):
            raise ValueError(f"unknown message kind {self.kind!r}")
        if self.kind == "offer" and self.weight is not None:
            raise ValueError("offers never carry weights")


class Bidder:
    """Claim side of one demand.  Event handlers return the message to send,
    or None when suppression applies (value and membership both unchanged)."""

    def __init__(self, ident, magnitude: float = 0.0, auctions: Iterable = (),
                 weight: int = 1, *, quantize: bool = True, always_emit: bool = False):
        self.ident = ident
        self.magnitude = float(magnitude)
        self.weight = int(weight)
        self._check()
        self.auctions = set(auctions)
        self.offers: Dict[Hashable, float] = {}
        self.quantize = quantize
        self.always_emit = always_emit
        self.claim = 0.0
        self._last_emitted = None
        self._membership_dirty = True  # nobody has heard us yet
        self._update_claim()

    def _check(self):
        if not 0.0 <= self.magnitude <= 1.0:
            raise ValueError(f"magnitude {self.magnitude!r} outside [0, 1]")
        if not 1 <= self.weight <= 16:
            raise ValueError(f"weight {self.weight} outside 1..16")

    def _update_claim(self):
        visible = [v for j, v in self.offers.items() if j in self.auctions]
        self.claim = min(visible + [self.magnitude / self.weight])

    def _emit(self) -> Optional[AuctionMessage]:
        if self.quantize:
            raw = encode(self.claim)
            value = decode(raw)
            payload = raw
        else:
            raw = None
            value = self.claim
            payload = value
        if self.always_emit or self._membership_dirty or _changed(payload, self._last_emitted):
            self._last_emitted = payload
            self._membership_dirty = False
            return AuctionMessage("claim", self.ident, value, raw, self.weight)
        return None

    def set_demand(self, magnitude: float) -> Optional[AuctionMessage]:
        self.magnitude = float(magnitude)
        self._check()
        self._update_claim()
        return self._emit()

    def set_weight(self, weight: int) -> Optional[AuctionMessage]:
        self.weight = int(weight)
        self._check()
        self._update_claim()
        return self._emit()

    def receive_offer(self, auction, value: float) -> Optional[AuctionMessage]:
        self.offers[auction] = value
        self._update_claim()
        return self._emit()

    def join_auction(self, auction) -> Optional[AuctionMessage]:
        if auction not in self.auctions:
            self.auctions.add(auction)
            self._membership_dirty = True
        self._update_claim()
        return self._emit()

    def leave_auction(self, auction) -> Optional[AuctionMessage]:
        if auction in self.auctions:
            self.auctions.discard(auction)
            self.offers.pop(auction, None)  # a rejoin waits for fresh data
            self._membership_dirty = True
        self._update_claim()
        return self._emit()


class Auctioneer:
    """Offer side of one shared resource."""

    def __init__(self, ident, capacity: float = 0.0, bidders: Iterable = (),
                 *, quantize: bool = True, always_emit: bool = False):
        self.ident = ident
        self.capacity = float(capacity)
        if not 0.0 <= self.capacity <= 1.0:
            raise ValueError(f"capacity {self.capacity!r} outside [0, 1]")
        self.bidders = set(bidders)
        self.claims: Dict[Hashable, float] = {}
        self.weights: Dict[Hashable, int] = {}
        self.quantize = quantize
        self.always_emit = always_emit
        self.offer = 0.0
        self._last_emitted = None
        self._membership_dirty = True
        self._update_offer()

    def _advertised(self, x: float) -> float:
        return decode(encode_floor(x)) if self.quantize else x

    def _update_offer(self):
        members = self.bidders
        if not members:
            self.offer = self.capacity
            return
        constrained = set()
        available = self.capacity
        done = False
        while not done:
            if constrained == members:
                offer = available + max(self.claims.get(b, 0.0) for b in members)
                done = True
            else:
                done = True
                sharers = members - constrained
                fragments = sum(self.weights.get(b, 1) for b in sharers)
                offer = available / fragments
                threshold = self._advertised(offer)
                for b in sorted(sharers, key=repr):
                    c = self.claims.get(b, 0.0)
                    if c < threshold:
                        constrained.add(b)
                        available -= c * self.weights.get(b, 1)
                        done = False
        self.offer = offer

    def _emit(self) -> Optional[AuctionMessage]:
        if self.quantize:
            raw = encode_floor(self.offer)
            value = decode(raw)
            payload = raw
        else:
            raw = None
            value = self.offer
            payload = value
        if self.always_emit or self._membership_dirty or _changed(payload, self._last_emitted):
            self._last_emitted = payload
            self._membership_dirty = False
            return AuctionMessage("offer", self.ident, value, raw, None)
        return None

    def set_capacity(self, capacity: float) -> Optional[AuctionMessage]:
        self.capacity = float(capacity)
        if not 0.0 <= self.capacity <= 1.0:
            raise ValueError(f"capacity {self.capacity!r} outside [0, 1]")
        self._update_offer()
        return self._emit()

    def receive_claim(self, bidder, value: float, weight: int = 1) -> Optional[AuctionMessage]:
        self.claims[bidder] = value
        self.weights[bidder] = weight
        self._update_offer()
        return self._emit()

    def join(self, bidder) -> Optional[AuctionMessage]:
        if bidder not in self.bidders:
            self.bidders.add(bidder)
            self._membership_dirty = True
        self._update_offer()
        return self._emit()

    def leave(self, bidder) -> Optional[AuctionMessage]:
        if bidder in self.bidders:
            self.bidders.discard(bidder)
            self.claims.pop(bidder, None)
            self.weights.pop(bidder, None)
            self._membership_dirty = True
        self._update_offer()
        return self._emit()


@dataclass
class NetworkResult:
    claims: Dict[Hashable, float]
    offers: Dict[Hashable, float]
    deliveries: int
    quiescent: bool


def run_network(problem: AllocationProblem, *, seed: int = 0, quantize: bool = True,
                always_emit: bool = False, max_deliveries: Optional[int] = None) -> NetworkResult:
    """Run bidders and auctioneers to quiescence over a lossless transport.

    Each link (sender, target) holds at most one undelivered announcement and
    a newer one supersedes it, the way periodic broadcasts coalesce state for
    a listener.  Which link delivers next is seeded-random, standing in for
    arbitrary bounded delays.  Queueing every intermediate value instead
    would amplify the echo traffic geometrically during transients.  Returns
    the final claims (per fragment), internal offers, and the delivery count.
    """
    problem.validate()
    auctioneers = {
        j: Auctioneer(j, capacity=problem.capacities[j], bidders=problem.members(j),
                      quantize=quantize, always_emit=always_emit)
        for j in sorted(problem.capacities, key=repr)
    }
    bidders = {
        i: Bidder(i, magnitude=d.magnitude, auctions=d.resources, weight=d.weight,
                  quantize=quantize, always_emit=always_emit)
        for i, d in sorted(problem.demands.items(), key=lambda kv: repr(kv[0]))
    }

    pending: Dict[tuple, AuctionMessage] = {}
    links = []  # keys of pending, i.e. links with an undelivered announcement

    def enqueue(key, msg):
        if key not in pending:
            links.append(key)
        pending[key] = msg

    def fan_out(msg: AuctionMessage):
        if msg.kind == "claim":
            for j in sorted(bidders[msg.sender].auctions, key=repr):
                enqueue(("auction", j, msg.sender), msg)
        else:
            for i in sorted(auctioneers[msg.sender].bidders, key=repr):
                enqueue(("bidder", i, msg.sender), msg)

    for i, b in bidders.items():
        msg = b.set_demand(b.magnitude)
        if msg:
            fan_out(msg)
    for j, a in auctioneers.items():
        msg = a.set_capacity(a.capacity)
        if msg:
            fan_out(msg)

    rng = random.Random(seed)
    cap = max_deliveries
    if cap is None:
        cap = 50 * max(1, len(bidders) * len(auctioneers)) + 1000
    deliveries = 0
    quiescent = True
    while links:
        if deliveries >= cap:
            quiescent = False
            break
        k = rng.randrange(len(links))
        key = links[k]
        msg = pending.pop(key)
        links[k] = links[-1]
        links.pop()
        target_kind, target, _sender = key
        deliveries += 1
        if target_kind == "auction":
            out = auctioneers[target].receive_claim(msg.sender, msg.value, weight=msg.weight or 1)
        else:
            out = bidders[target].receive_offer(msg.sender, msg.value)
        if out:
            fan_out(out)

    return NetworkResult(
        claims={i: b.claim for i, b in bidders.items()},
        offers={j: a.offer for j, a in auctioneers.items()},
        deliveries=deliveries,
        quiescent=quiescent,
    )
