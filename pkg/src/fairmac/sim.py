"""Deterministic slotted-world simulator for the auction-driven MAC.

One world holds MacNode runtimes, true positions, and a unit-disk channel.
Every slot: move nodes, fire scripted changes, deliver traffic arrivals, let
each node decide whether to transmit, then resolve the channel.  A listener
decodes a packet only when exactly one in-range node transmitted; data
packets addressed to the decoder are acknowledged within the slot, and the
sender always receives that ack (it owns the slot from its own vantage
point).  Third parties attribute ack energy only when a single acker is in
range.  All randomness flows from the scenario seed through per-purpose
derived seeds, so identical scenarios replay bit-identically.

The world also maintains ground truth: the allocation problem implied by
true adjacency and active demands, re-solved at every change, against which
metrics judge the distributed outcome.  Every node stays in the problem as a
resource even when silent; an idle node's capacity still binds its loaded
neighbours, and the overload keepalive rule is what makes that constraint
discoverable over the air.
"""

from __future__ import annotations

import hashlib
import math
import random
from collections import deque
from dataclasses import dataclass, field as dc_field
from typing import Dict, Hashable, List, Optional, Set, Tuple

import numpy as np

from .allocation import AllocationProblem, Demand, solve_max_min, solve_weighted_max_min
from .mac import MacNode, MacPacket, NodeConfig


def child_seed(seed: int, tag: str) -> int:
    digest = hashlib.sha256(f"{seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass
class TrafficSpec:
    loaded_fraction: float = 0.2
    rate_low: float = 25.0
    rate_high: float = 125.0
    size: int = 1500

    @staticmethod
    def small(loaded_fraction: float = 0.2) -> "TrafficSpec":
        return TrafficSpec(loaded_fraction, 25.0, 125.0)

    @staticmethod
    def large(loaded_fraction: float = 0.2) -> "TrafficSpec":
        return TrafficSpec(loaded_fraction, 450.0, 550.0)


@dataclass
class ScriptEvent:
    at: float
    kind: str  # only "demand" is scripted directly; links come from motion
    node: Hashable = None
    demand: float = 0.0


@dataclass
class Scenario:
    name: str = "adhoc"
    seed: int = 0
    n_nodes: int = 20
    area: Tuple[float, float] = (300.0, 1500.0)
    range_m: float = 250.0
    duration: float = 5.0
    node_config: NodeConfig = dc_field(default_factory=NodeConfig)
    traffic: Optional[TrafficSpec] = None
    demands: Optional[Dict[Hashable, float]] = None
    weights: Dict[Hashable, int] = dc_field(default_factory=dict)
    positions: Optional[Dict[Hashable, Tuple[float, float]]] = None
    mobility: str = "static"  # or "waypoint"
    speed: float = 0.0
    warmup: float = 30.0
    paths: Dict[Hashable, List[Tuple[float, float, float]]] = dc_field(default_factory=dict)
    script: List[ScriptEvent] = dc_field(default_factory=list)
    trace: bool = False

    def validate(self):
        if self.n_nodes < 1:
            raise ValueError("n_nodes must be at least 1")
        if self.duration <= 0.0:
            raise ValueError("duration must be positive")
        if self.range_m <= 0.0:
            raise ValueError("range_m must be positive")
        if self.area[0] <= 0.0 or self.area[1] <= 0.0:
            raise ValueError("area sides must be positive")
        if self.mobility not in ("static", "waypoint"):
            raise ValueError(f"unknown mobility model {self.mobility!r}")
        if self.speed < 0.0:
            raise ValueError("speed cannot be negative")
        if self.positions is not None and len(self.positions) != self.n_nodes:
            raise ValueError("positions must cover every node exactly once")
        if self.traffic is not None and not 0.0 <= self.traffic.loaded_fraction <= 1.0:
            raise ValueError("loaded_fraction outside [0, 1]")
        ids = set(self.positions) if self.positions is not None else set(range(self.n_nodes))
        for span, what in ((self.demands or {}, "demand"), (self.weights, "weight"),
                           (self.paths, "path")):
            for k in span:
                if k not in ids:
                    raise ValueError(f"{what} entry for unknown node {k!r}")
        for ev in self.script:
            if ev.kind != "demand":
                raise ValueError(f"unknown script kind {ev.kind!r}")
            if ev.node not in ids:
                raise ValueError(f"script targets unknown node {ev.node!r}")
            if not 0.0 <= ev.at <= self.duration:
                raise ValueError("script event outside the run")
        return self


def generate_topology(seed: int, n: int, area: Tuple[float, float]) -> Dict[int, Tuple[float, float]]:
    rng = random.Random(seed)
    return {i: (rng.uniform(0.0, area[0]), rng.uniform(0.0, area[1])) for i in range(n)}


class WaypointField:
    """Random-waypoint motion, pause zero, fixed speed.  Warm-up seconds are
    advanced at construction so sampling starts near steady state."""

    def __init__(self, seed: int, n_nodes: int, area: Tuple[float, float],
                 speed: float, warmup: float = 30.0,
                 start: Optional[Dict[int, Tuple[float, float]]] = None):
        self.rng = random.Random(child_seed(seed, "waypoint"))
        self.area = area
        self.speed = speed
        self.ids = sorted(start) if start else list(range(n_nodes))
        if start:
            pos = [start[i] for i in self.ids]
        else:
            pos = [(self.rng.uniform(0, area[0]), self.rng.uniform(0, area[1]))
                   for _ in self.ids]
        self.pos = np.array(pos, dtype=float)
        self.target = np.array([self._draw_target() for _ in self.ids], dtype=float)
        if speed > 0.0 and warmup > 0.0:
            done = 0.0
            while done < warmup:
                step = min(1.0, warmup - done)
                self.advance(step)
                done += step

    def _draw_target(self):
        return (self.rng.uniform(0, self.area[0]), self.rng.uniform(0, self.area[1]))

    def advance(self, dt: float):
        if self.speed <= 0.0 or dt <= 0.0:
            return
        left = np.full(len(self.ids), self.speed * dt)
        while left.max() > 1e-12:
            delta = self.target - self.pos
            dist = np.hypot(delta[:, 0], delta[:, 1])
            move = np.minimum(dist, left)
            safe = np.where(dist > 0.0, dist, 1.0)
            self.pos += delta / safe[:, None] * move[:, None]
            left = left - move
            arrived = np.nonzero(left > 1e-12)[0]
            for i in arrived:
                self.target[i] = self._draw_target()

    def positions(self) -> Dict[int, Tuple[float, float]]:
        return {i: (float(x), float(y)) for i, (x, y) in zip(self.ids, self.pos)}

    def adjacency(self, range_m: float) -> Dict[int, Set[int]]:
        d2 = ((self.pos[:, None, :] - self.pos[None, :, :]) ** 2).sum(-1)
        close = d2 <= range_m * range_m
        np.fill_diagonal(close, False)
        return {self.ids[i]: {self.ids[j] for j in np.nonzero(close[i])[0]}
                for i in range(len(self.ids))}


@dataclass
class ChannelOutcome:
    decoded: Dict[Hashable, Tuple[Hashable, MacPacket]]
    ackers: Dict[Hashable, Hashable]  # acker -> data sender
    acked: Set[Hashable]
    ack_heard: Dict[Hashable, Hashable]  # listener -> unique audible acker
    collisions: int


def resolve_slot(transmitters: Dict[Hashable, MacPacket],
                 adjacency: Dict[Hashable, Set[Hashable]]) -> ChannelOutcome:
    decoded: Dict[Hashable, Tuple[Hashable, MacPacket]] = {}
    ackers: Dict[Hashable, Hashable] = {}
    collisions = 0
    for listener in adjacency:
        if listener in transmitters:
            continue
        audible = [s for s in transmitters if listener in adjacency[s]]
        if len(audible) == 1:
            src = audible[0]
            pkt = transmitters[src]
            decoded[listener] = (src, pkt)
            if pkt.kind == "data" and pkt.dst == listener:
                ackers[listener] = src
        elif len(audible) > 1:
            collisions += 1
    acked = set(ackers.values())
    ack_heard: Dict[Hashable, Hashable] = {}
    for listener in adjacency:
        if listener in transmitters or listener in ackers:
            continue
        audible = [a for a in ackers if listener in adjacency[a]]
        if len(audible) == 1:
            ack_heard[listener] = audible[0]
    return ChannelOutcome(decoded, ackers, acked, ack_heard, collisions)


@dataclass
class RunRecord:
    scenario: Scenario
    claim_events: List[Tuple[float, Hashable, float]] = dc_field(default_factory=list)
    persistence_samples: List[Tuple[float, Hashable, float]] = dc_field(default_factory=list)
    oracle_timeline: List[Tuple[float, Dict[Hashable, float]]] = dc_field(default_factory=list)
    adjacency_timeline: List[Tuple[float, Dict[Hashable, Tuple]]] = dc_field(default_factory=list)
    demand_timeline: List[Tuple[float, Dict[Hashable, float]]] = dc_field(default_factory=list)
    change_events: List[Tuple[float, str, Tuple]] = dc_field(default_factory=list)
    counters: Dict[str, int] = dc_field(default_factory=dict)
    per_node: Dict[Hashable, Dict[str, float]] = dc_field(default_factory=dict)
    violations: List[str] = dc_field(default_factory=list)
    final_claims: Dict[Hashable, float] = dc_field(default_factory=dict)
    final_problem: Optional[AllocationProblem] = None


class SimError(RuntimeError):
    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class World:
    def __init__(self, scenario: Scenario):
        scenario.validate()
        self.sc = scenario
        cfg = scenario.node_config
        self.slot_len = cfg.slot_len
        self.v = cfg.v
        self.total_slots = int(round(scenario.duration / self.slot_len))

        if scenario.positions is not None:
            self.ids = sorted(scenario.positions, key=repr)
            self.positions = {i: tuple(map(float, scenario.positions[i])) for i in self.ids}
        else:
            topo = generate_topology(child_seed(scenario.seed, "topology"),
                                     scenario.n_nodes, scenario.area)
            self.ids = sorted(topo)
            self.positions = topo

        self.field: Optional[WaypointField] = None
        if scenario.mobility == "waypoint":
            self.field = WaypointField(scenario.seed, scenario.n_nodes, scenario.area,
                                       scenario.speed, warmup=scenario.warmup,
                                       start=self.positions if scenario.positions else None)
            self.positions = self.field.positions()

        self.paths = {i: sorted(p) for i, p in scenario.paths.items()}
        self._motion_windows = [(p[0][0], p[-1][0], i) for i, p in self.paths.items()]

        self.weights = {i: int(scenario.weights.get(i, 1)) for i in self.ids}
        self.demands: Dict[Hashable, float] = {}
        self.rates: Dict[Hashable, float] = {}
        traffic_rng = random.Random(child_seed(scenario.seed, "traffic"))
        if scenario.demands is not None:
            for i in self.ids:
                w = float(scenario.demands.get(i, 0.0))
                self.demands[i] = w
                if w > 0.0:
                    self.rates[i] = w / self.slot_len
        elif scenario.traffic is not None:
            spec = scenario.traffic
            n_loaded = round(spec.loaded_fraction * len(self.ids))
            loaded = traffic_rng.sample(self.ids, n_loaded)
            for i in self.ids:
                if i in loaded:
                    rate = traffic_rng.uniform(spec.rate_low, spec.rate_high)
                    self.rates[i] = rate
                    self.demands[i] = min(1.0, rate * self.slot_len)
                else:
                    self.demands[i] = 0.0
        else:
            self.demands = {i: 0.0 for i in self.ids}

        self.size = scenario.traffic.size if scenario.traffic else 1500
        self.nodes: Dict[Hashable, MacNode] = {}
        for i in self.ids:
            self.nodes[i] = MacNode(i, config=cfg, demand=self.demands[i],
                                    weight=self.weights[i],
                                    seed=child_seed(scenario.seed, f"node:{i!r}"))

        self._next_arrival = {}
        for i, rate in self.rates.items():
            interval = 1.0 / rate
            self._next_arrival[i] = traffic_rng.uniform(0.0, interval)

        self.adj = self._compute_adjacency()
        self.script = sorted(scenario.script, key=lambda e: e.at)
        self._script_ptr = 0
        self.record = RunRecord(scenario=scenario)
        self._last_claim = {i: None for i in self.ids}
        self._enqueued = 0
        self.trace: deque = deque(maxlen=256)
        self._weighted = any(g > 1 for g in self.weights.values())
        self._resolve_truth(0.0)

    # ------------------------------------------------------------ geometry

    def _compute_adjacency(self) -> Dict[Hashable, Set[Hashable]]:
        r2 = self.sc.range_m ** 2
        adj = {i: set() for i in self.ids}
        for a_idx, a in enumerate(self.ids):
            ax, ay = self.positions[a]
            for b in self.ids[a_idx + 1:]:
                bx, by = self.positions[b]
                if (ax - bx) ** 2 + (ay - by) ** 2 <= r2:
                    adj[a].add(b)
                    adj[b].add(a)
        return adj

    def _path_position(self, node, t):
        pts = self.paths[node]
        if t <= pts[0][0]:
            return pts[0][1], pts[0][2]
        for (t0, x0, y0), (t1, x1, y1) in zip(pts, pts[1:]):
            if t <= t1:
                if t1 == t0:
                    return x1, y1
                f = (t - t0) / (t1 - t0)
                return x0 + f * (x1 - x0), y0 + f * (y1 - y0)
        return pts[-1][1], pts[-1][2]

    # ------------------------------------------------------------ truth

    def truth_problem(self) -> AllocationProblem:
        demands = {}
        for i in self.ids:
            w = self.demands[i]
            if w > 0.0:
                demands[i] = Demand(min(1.0, w), frozenset({i} | self.adj[i]),
                                    self.weights[i])
        capacities = {j: 1.0 for j in self.ids}
        return AllocationProblem(capacities=capacities, demands=demands)

    def _resolve_truth(self, t: float):
        problem = self.truth_problem()
        solve = solve_weighted_max_min if self._weighted else solve_max_min
        solution = solve(problem)
        self.record.oracle_timeline.append((t, dict(solution)))
        self.record.adjacency_timeline.append(
            (t, {i: tuple(sorted(self.adj[i], key=repr)) for i in self.ids}))
        self.record.demand_timeline.append((t, dict(self.demands)))

    # ------------------------------------------------------------ stepping

    def _apply_motion(self, t: float) -> bool:
        moved = False
        if self.field is not None:
            self.field.advance(self.slot_len)
            self.positions = self.field.positions()
            moved = True
        for start, end, node in self._motion_windows:
            if start - self.slot_len <= t <= end + self.slot_len:
                self.positions[node] = self._path_position(node, t)
                moved = True
        return moved

    def _diff_adjacency(self, t: float, fresh: Dict[Hashable, Set[Hashable]]):
        changed_pairs = []
        for a in self.ids:
            for b in fresh[a] - self.adj[a]:
                if repr(a) < repr(b):
                    changed_pairs.append(("link_add", (a, b)))
            for b in self.adj[a] - fresh[a]:
                if repr(a) < repr(b):
                    changed_pairs.append(("link_remove", (a, b)))
        if changed_pairs:
            self.adj = fresh
            for kind, pair in changed_pairs:
                self.record.change_events.append((t, kind, pair))
            self._resolve_truth(t)

    def _fire_script(self, t: float):
        fired = False
        while self._script_ptr < len(self.script) and self.script[self._script_ptr].at <= t:
            ev = self.script[self._script_ptr]
            self._script_ptr += 1
            self.demands[ev.node] = float(ev.demand)
            if ev.node in self.rates or ev.demand > 0.0:
                if ev.demand > 0.0:
                    self.rates[ev.node] = ev.demand / self.slot_len
                    self._next_arrival.setdefault(
                        ev.node, t + self.slot_len / max(ev.demand, 1e-9))
                else:
                    self.rates.pop(ev.node, None)
                    self._next_arrival.pop(ev.node, None)
            self.nodes[ev.node].set_demand(ev.demand)
            self.record.change_events.append((t, "demand", (ev.node,)))
            fired = True
        if fired:
            self._resolve_truth(t)

    def _deliver_traffic(self, slot: int, t: float):
        for i, rate in self.rates.items():
            interval = 1.0 / rate
            while self._next_arrival[i] <= t:
                self.nodes[i].enqueue(slot, dst=None, size=self.size)
                self._enqueued += 1
                self._next_arrival[i] += interval

    def _check_conservation(self, slot: int):
        delivered = drops_r = drops_q = queued = 0
        for n in self.nodes.values():
            delivered += n.delivered
            drops_r += n.drops_retry
            drops_q += n.drops_queue
            queued += len(n.queue)
        if self._enqueued != delivered + drops_r + drops_q + queued:
            msg = (f"conservation broke at slot {slot}: enqueued {self._enqueued} != "
                   f"{delivered}+{drops_r}+{drops_q}+{queued}")
            self.record.violations.append(msg)
            raise SimError(msg, self.trace)

    def _step(self, slot: int):
        t = slot * self.slot_len
        if self._apply_motion(t):
            if self.field is not None:
                fresh = self.field.adjacency(self.sc.range_m)
            else:
                fresh = self._compute_adjacency()
            self._diff_adjacency(t, fresh)
        self._fire_script(t)
        self._deliver_traffic(slot, t)

        boundary = slot % self.v == 0
        for i in self.ids:
            node = self.nodes[i]
            node.begin_slot(slot)
            if boundary:
                self.record.persistence_samples.append((t, i, node.persistence))

        tx = {}
        for i in self.ids:
            pkt = self.nodes[i].transmit_decision(slot)
            if pkt is not None:
                tx[i] = pkt
        out = resolve_slot(tx, self.adj)

        for listener in sorted(out.decoded, key=repr):
            src, pkt = out.decoded[listener]
            self.nodes[listener].on_hear(slot, src, pkt.offer_raw, pkt.claim_raw,
                                         pkt.weight)
        for sender in sorted(tx, key=repr):
            pkt = tx[sender]
            if pkt.kind != "data":
                continue
            if sender in out.acked:
                self.nodes[sender].on_ack_result(pkt, True)
                self.nodes[sender].on_hear(slot, pkt.dst)
            else:
                self.nodes[sender].on_ack_result(pkt, False)
        for listener in sorted(out.ack_heard, key=repr):
            self.nodes[listener].on_hear(slot, out.ack_heard[listener])

        for i in self.ids:
            claim = self.nodes[i].bidder.claim
            if claim != self._last_claim[i]:
                self._last_claim[i] = claim
                self.record.claim_events.append((t, i, claim))

        self.record.counters["collisions"] = \
            self.record.counters.get("collisions", 0) + out.collisions
        # the ring always runs; it is the dump attached to violations
        self.trace.append((slot, tuple(sorted(tx, key=repr)),
                           len(out.decoded), len(out.ackers), out.collisions))
        self._check_conservation(slot)

    def run(self) -> RunRecord:
        for slot in range(self.total_slots):
            self._step(slot)
        rec = self.record
        delivered = sum(n.delivered for n in self.nodes.values())
        rec.counters.update(
            enqueued=self._enqueued,
            delivered=delivered,
            drops_retry=sum(n.drops_retry for n in self.nodes.values()),
            drops_queue=sum(n.drops_queue for n in self.nodes.values()),
            queued_end=sum(len(n.queue) for n in self.nodes.values()),
            data_sent=sum(n.sent_data for n in self.nodes.values()),
            dummy_sent=sum(n.sent_dummy for n in self.nodes.values()),
        )
        for i in self.ids:
            n = self.nodes[i]
            rec.per_node[i] = {
                "delivered": n.delivered,
                "delay_sum": n.delay_sum,
                "delay_sq_sum": n.delay_sq_sum,
                "drops_retry": n.drops_retry,
                "drops_queue": n.drops_queue,
            }
        rec.final_claims = {i: self.nodes[i].bidder.claim for i in self.ids}
        rec.final_problem = self.truth_problem()
        return rec


def run_scenario(scenario: Scenario) -> RunRecord:
    return World(scenario).run()


def scripted_link_change(seed: int, n_nodes: int, kind: str, at: float,
                         duration: float, area: Tuple[float, float] = (300.0, 1500.0),
                         range_m: float = 250.0,
                         traffic: Optional[TrafficSpec] = None,
                         node_config: Optional[NodeConfig] = None) -> Scenario:
    """Random placement plus one mover whose radial approach to (or retreat
    from) an anchor crosses the range threshold exactly once, at time `at`.
    Placements that would let the mover disturb any other link are redrawn."""
    if kind not in ("add", "remove"):
        raise ValueError(f"unknown link script {kind!r}")
    if not 0.3 <= at <= duration - 0.3:
        raise ValueError("change time too close to the run edges")
    rng = random.Random(child_seed(seed, f"linkscript:{kind}"))
    margin = 10.0
    near, far = range_m - margin, range_m + margin
    for _ in range(500):
        draw = rng.randrange(1 << 30)
        pos = generate_topology(draw, n_nodes - 1, area)
        anchor = rng.choice(sorted(pos))
        ax, ay = pos[anchor]
        theta = rng.uniform(0.0, 2 * math.pi)
        d0, d1 = (far, near) if kind == "add" else (near, far)
        sx, sy = ax + d0 * math.cos(theta), ay + d0 * math.sin(theta)
        ex, ey = ax + d1 * math.cos(theta), ay + d1 * math.sin(theta)
        mover = n_nodes - 1
        window = 0.4
        path = [(0.0, sx, sy), (at - window / 2, sx, sy),
                (at + window / 2, ex, ey), (duration, ex, ey)]
        ok = True
        for other, (ox, oy) in pos.items():
            if other == anchor:
                continue
            for f in range(0, 101):
                x = sx + (ex - sx) * f / 100
                y = sy + (ey - sy) * f / 100
                d = math.hypot(x - ox, y - oy)
                if abs(d - range_m) <= margin / 2:
                    ok = False
                    break
            if not ok:
                break
        if not ok:
            continue
        positions = dict(pos)
        positions[mover] = (sx, sy)
        return Scenario(
            name=f"link-{kind}",
            seed=seed,
            n_nodes=n_nodes,
            area=area,
            range_m=range_m,
            duration=duration,
            node_config=node_config or NodeConfig(),
            traffic=traffic or TrafficSpec.small(0.5),
            positions=positions,
            paths={mover: path},
        )
    raise ValueError("no placement satisfied the single-crossing constraint")
