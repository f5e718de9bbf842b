"""Post-run analysis of simulation records.

Four measurements, each usable on its own or folded into a MetricsReport:

* detect_convergence -- when every loaded node settled onto its fair share
  and stayed there until the end of the observation window,
* relative_error -- geometric-mean over- and under-use of the channel while
  the network was still adapting,
* range_of_impact -- how many hops a local change rippled outwards,
* build_report + JSON/CSV writers for whole-record summaries.
"""

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field, is_dataclass
from typing import Dict, Hashable, Iterable, List, Mapping, Optional, Sequence, Tuple

from . import __version__
from .allocation import is_feasible, is_lex_max_min

# claims travel as 8-bit values; two quanta covers encode+decode of both sides
CONVERGENCE_TOL = 2 / 255
# a ripple must exceed one wire quantum to count as an impact
IMPACT_TOL = 1 / 255 + 1e-9
# quantized ties land exactly on quantum boundaries; the 1e-9 keeps float
# summation order from tipping a boundary case
AUDIT_SLACK = 3 / 255 + 1e-9
INF = float("inf")

ClaimEvent = Tuple[float, Hashable, float]


# --------------------------------------------------------------- convergence

def detect_convergence(claim_events: Sequence[ClaimEvent],
                       oracle: Mapping[Hashable, float],
                       active: Iterable[Hashable],
                       t_start: float,
                       t_end: float,
                       tol: float = CONVERGENCE_TOL) -> float:
    """Earliest time from which every active node stays within tol of its
    oracle claim through the end of the window [t_start, t_end).

    claim_events are (time, node, new_value) steps; a node holds its last
    value between steps and 0.0 before its first.  Returns an absolute time,
    clamped to t_start, or INF when some node is still off at the window end.
    A node that relapses and recovers converges at the recovery, not before.
    """
    by_node: Dict[Hashable, List[Tuple[float, float]]] = {}
    for t, node, value in claim_events:
        if t < t_end:
            by_node.setdefault(node, []).append((t, value))
    worst = t_start
    for node in active:
        target = oracle.get(node, 0.0)
        steps = [(-INF, 0.0)] + sorted(by_node.get(node, []), key=lambda e: e[0])
        settled_at = None
        for t, value in reversed(steps):
            if abs(value - target) <= tol:
                settled_at = t
            else:
                break
        if settled_at is None:
            return INF
        worst = max(worst, settled_at)
    return worst


# --------------------------------------------------------------- error

def relative_error(samples: Iterable[Tuple[float, float]]) -> Tuple[float, float]:
    """Geometric-mean relative error of (actual, target) pairs, split by sign.

    A sample at or above target joins the excess class with factor
    1 + (actual-target)/target; at or below, the deficit class with factor
    1 + (target-actual)/target.  Exact samples sit in both with factor 1.
    Returns (excess, deficit), each the class geomean minus one; an empty
    class reports 0.0.  Targets <= 0 are skipped.
    """
    excess_logs: List[float] = []
    deficit_logs: List[float] = []
    for actual, target in samples:
        if target <= 0.0:
            continue
        if actual >= target:
            excess_logs.append(math.log1p((actual - target) / target))
        if actual <= target:
            deficit_logs.append(math.log1p((target - actual) / target))

    def fold(logs: List[float]) -> float:
        if not logs:
            return 0.0
        return math.expm1(math.fsum(logs) / len(logs))

    return fold(excess_logs), fold(deficit_logs)


# --------------------------------------------------------------- impact

def range_of_impact(locus: Iterable[Hashable],
                    changed: Iterable[Hashable],
                    adjacency: Mapping[Hashable, Iterable[Hashable]]) -> Optional[float]:
    """Mean hop distance from the change locus to the nodes whose claims moved.

    BFS over adjacency with every locus node at distance zero.  Nodes in
    `changed` that the BFS cannot reach are dropped.  Returns None when
    nothing (reachable) changed, i.e. the event had no observable impact.
    """
    changed = set(changed)
    if not changed:
        return None
    dist: Dict[Hashable, int] = {n: 0 for n in locus}
    frontier = deque(dist)
    while frontier:
        a = frontier.popleft()
        for b in adjacency.get(a, ()):
            if b not in dist:
                dist[b] = dist[a] + 1
                frontier.append(b)
    hops = [dist[n] for n in changed if n in dist]
    if not hops:
        return None
    return sum(hops) / len(hops)


def changed_nodes(claim_events: Sequence[ClaimEvent],
                  t_event: float,
                  t_end: float,
                  tol: float = IMPACT_TOL) -> set:
    """Nodes whose claim left a tol band around its pre-event value during
    [t_event, t_end)."""
    baseline: Dict[Hashable, float] = {}
    moved = set()
    for t, node, value in claim_events:
        if t < t_event:
            baseline[node] = value
        elif t < t_end and abs(value - baseline.get(node, 0.0)) > tol:
            moved.add(node)
    return moved


# --------------------------------------------------------------- report

@dataclass
class MetricsReport:
    scenario_name: str
    seed: int
    duration: float
    init_convergence: float = INF
    event_convergences: List[Dict] = field(default_factory=list)
    excess_error: float = 0.0
    deficit_error: float = 0.0
    throughput: float = 0.0
    delay_mean: float = 0.0
    delay_var: float = 0.0
    delivered: int = 0
    enqueued: int = 0
    drops_retry: int = 0
    drops_queue: int = 0
    data_sent: int = 0
    dummy_sent: int = 0
    collisions: int = 0
    impacts: List[Dict] = field(default_factory=list)
    impact_mean: Optional[float] = None
    zero_impact_fraction: Optional[float] = None
    per_node: Dict[str, Dict[str, float]] = field(default_factory=dict)
    final_audit_ok: Optional[bool] = None
    scenario: Dict = field(default_factory=dict)


def build_report(record, tol: float = CONVERGENCE_TOL) -> MetricsReport:
    """Fold a RunRecord into a MetricsReport.

    Observation windows are cut at every oracle re-solve.  Convergence is
    measured per window; error samples are taken only while a window is
    still in its transient (between the window start and its detected
    convergence time), against target gamma_i * oracle share.
    """
    sc = record.scenario
    duration = sc.duration
    weights = {i: int(sc.weights.get(i, 1)) for i in sc.weights} if sc.weights else {}

    timeline = record.oracle_timeline
    windows = []
    for k, (t_k, solution) in enumerate(timeline):
        t_next = timeline[k + 1][0] if k + 1 < len(timeline) else duration
        windows.append((t_k, t_next, solution))

    window_T = []
    for t_k, t_next, solution in windows:
        active = sorted(solution, key=repr)
        window_T.append(detect_convergence(record.claim_events, solution,
                                           active, t_k, t_next, tol=tol))

    init_convergence = INF
    if windows:
        t0 = windows[0][0]
        init_convergence = window_T[0] - t0 if window_T[0] != INF else INF

    event_convergences = []
    for (t_k, t_next, solution), T in zip(windows[1:], window_T[1:]):
        kinds = sorted({kind for t, kind, _ in record.change_events if t == t_k})
        event_convergences.append({
            "at": t_k,
            "kind": "+".join(kinds) if kinds else "change",
            "seconds": T - t_k if T != INF else INF,
        })

    err_samples = []
    for (t_k, t_next, solution), T in zip(windows, window_T):
        hi = t_next if T == INF else min(T, t_next)
        if hi <= t_k:
            continue
        for t, i, p in record.persistence_samples:
            if t_k <= t < hi and i in solution:
                target = weights.get(i, 1) * solution[i]
                if target > 0.0:
                    err_samples.append((p, target))
    excess_error, deficit_error = relative_error(err_samples)

    counters = record.counters
    delivered = counters.get("delivered", 0)
    throughput = delivered / duration if duration > 0 else 0.0

    total_delay = sum(s.get("delay_sum", 0.0) for s in record.per_node.values())
    total_sq = sum(s.get("delay_sq_sum", 0.0) for s in record.per_node.values())
    delay_mean = total_delay / delivered if delivered else 0.0
    delay_var = total_sq / delivered - delay_mean ** 2 if delivered else 0.0

    per_node = {}
    for i, stats in record.per_node.items():
        n = stats.get("delivered", 0)
        mean = stats.get("delay_sum", 0.0) / n if n else 0.0
        var = stats.get("delay_sq_sum", 0.0) / n - mean ** 2 if n else 0.0
        per_node[repr(i)] = {
            "delivered": n,
            "delay_mean": mean,
            "delay_var": var,
            "drops_retry": stats.get("drops_retry", 0),
            "drops_queue": stats.get("drops_queue", 0),
        }

    impacts = []
    events = record.change_events
    for idx, (t_e, kind, locus) in enumerate(events):
        t_end = duration
        for t_later, _, _ in events[idx + 1:]:
            if t_later > t_e:
                t_end = t_later
                break
        adjacency = {}
        for t_a, adj in record.adjacency_timeline:
            if t_a <= t_e:
                adjacency = adj
        moved = changed_nodes(record.claim_events, t_e, t_end)
        hops = range_of_impact(locus, moved, adjacency)
        impacts.append({"at": t_e, "kind": kind,
                        "locus": [repr(n) for n in locus], "hops": hops})

    reached = [e["hops"] for e in impacts if e["hops"] is not None]
    impact_mean = sum(reached) / len(reached) if reached else None
    zero_impact_fraction = None
    if impacts:
        zero = sum(1 for e in impacts if e["hops"] is None or e["hops"] == 0.0)
        zero_impact_fraction = zero / len(impacts)

    final_audit_ok = None
    if record.final_problem is not None and record.final_problem.demands:
        claims = {i: record.final_claims.get(i, 0.0)
                  for i in record.final_problem.demands}
        # an unconverged run can end with an infeasible claim set; that is
        # an audit failure, not an error
        final_audit_ok = (is_feasible(record.final_problem, claims,
                                      slack=AUDIT_SLACK)
                          and is_lex_max_min(record.final_problem, claims,
                                             slack=AUDIT_SLACK))

    return MetricsReport(
        scenario_name=sc.name,
        seed=sc.seed,
        duration=duration,
        init_convergence=init_convergence,
        event_convergences=event_convergences,
        excess_error=excess_error,
        deficit_error=deficit_error,
        throughput=throughput,
        delay_mean=delay_mean,
        delay_var=delay_var,
        delivered=delivered,
        enqueued=counters.get("enqueued", 0),
        drops_retry=counters.get("drops_retry", 0),
        drops_queue=counters.get("drops_queue", 0),
        data_sent=counters.get("data_sent", 0),
        dummy_sent=counters.get("dummy_sent", 0),
        collisions=counters.get("collisions", 0),
        impacts=impacts,
        impact_mean=impact_mean,
        zero_impact_fraction=zero_impact_fraction,
        per_node=per_node,
        final_audit_ok=final_audit_ok,
        scenario=_jsonable(asdict(sc)),
    )


# --------------------------------------------------------------- writers

def _jsonable(obj):
    # strict JSON: no bare Infinity/NaN tokens, keys stringified so that
    # sort_keys never compares int with str
    if is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(asdict(obj))
    if isinstance(obj, Mapping):
        return {(k if isinstance(k, str) else repr(k)): _jsonable(v)
                for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return [_jsonable(v) for v in sorted(obj, key=repr)]
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        if math.isnan(obj):
            return "nan"
    return obj


def report_to_json(report: MetricsReport, indent: int = 2) -> str:
    payload = asdict(report)
    payload["version"] = __version__
    if not payload.get("scenario"):
        payload["scenario"] = {"name": report.scenario_name, "seed": report.seed}
    return json.dumps(_jsonable(payload), indent=indent, sort_keys=True,
                      allow_nan=False)


_CSV_COLUMNS = [
    "scenario", "seed", "duration", "init_convergence",
    "mean_event_convergence", "excess_error", "deficit_error", "throughput",
    "delay_mean", "delay_var", "delivered", "enqueued", "drops_retry",
    "drops_queue", "data_sent", "dummy_sent", "collisions", "impact_mean",
    "zero_impact_fraction", "final_audit_ok",
]


def csv_header() -> List[str]:
    return list(_CSV_COLUMNS)


def report_to_csv_row(report: MetricsReport) -> List:
    seconds = [e["seconds"] for e in report.event_convergences]
    mean_event = sum(seconds) / len(seconds) if seconds else None

    def fmt(x):
        if x is None:
            return ""
        if isinstance(x, float) and math.isinf(x):
            return "inf"
        return x

    values = [report.scenario_name, report.seed, report.duration,
              report.init_convergence, mean_event, report.excess_error,
              report.deficit_error, report.throughput, report.delay_mean,
              report.delay_var, report.delivered, report.enqueued,
              report.drops_retry, report.drops_queue, report.data_sent,
              report.dummy_sent, report.collisions, report.impact_mean,
              report.zero_impact_fraction, report.final_audit_ok]
    return [fmt(v) for v in values]
