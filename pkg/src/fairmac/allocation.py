"""Lexicographic max-min allocation of shared resources.

The model: demand i wants up to ``magnitude`` units and draws simultaneously
on every resource in its ``resources`` set; resource j supplies at most
``capacity`` units in total to the demands attached to it.  An allocation is
lexicographically max-min when each demand is either satisfied (it got its
full magnitude) or is among the largest recipients at some saturated resource
it uses, i.e. nobody can be given more without taking from somebody poorer.

``solve_max_min`` computes that allocation by progressive filling: all
unfrozen demands grow at the same rate; a demand freezes when it reaches its
magnitude or when a resource it uses saturates.  ``solve_weighted_max_min``
treats demand i as ``weight`` identical fragments of magnitude
``magnitude / weight`` and returns the per-fragment value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Hashable, Mapping

MAX_WEIGHT = 16


class ProblemError(ValueError):
    """Malformed problem or allocation structure."""


class InfeasibleAllocationError(ValueError):
    """Allocation violates capacities or magnitudes beyond the given slack."""


@dataclass(frozen=True)
class Demand:
    magnitude: float
    resources: frozenset
    weight: int = 1


@dataclass
class AllocationProblem:
    capacities: Dict[Hashable, float]
    demands: Dict[Hashable, Demand]
    _members: Dict[Hashable, list] = field(default_factory=dict, repr=False)

    def members(self, resource) -> list:
        """Demand ids attached to a resource, in stable (sorted) order."""
        if not self._members:
            members = {j: [] for j in self.capacities}
            for i in sorted(self.demands, key=repr):
                for j in self.demands[i].resources:
                    if j in members:
                        members[j].append(i)
            self._members.update(members)
        return self._members[resource]

    def validate(self) -> None:
        for j, c in self.capacities.items():
            if not math.isfinite(c) or c < 0.0:
                raise ProblemError(f"resource {j!r}: capacity {c!r} must be finite and >= 0")
        for i, d in self.demands.items():
            if not math.isfinite(d.magnitude) or d.magnitude < 0.0:
                raise ProblemError(f"demand {i!r}: magnitude {d.magnitude!r} must be finite and >= 0")
            if not 1 <= d.weight <= MAX_WEIGHT:
                raise ProblemError(f"demand {i!r}: weight {d.weight} outside 1..{MAX_WEIGHT}")
            for j in d.resources:
                if j not in self.capacities:
                    raise ProblemError(f"demand {i!r} references unknown resource {j!r}")


Allocation = Dict[Hashable, float]

# Tie grouping for simultaneous freeze events.  Levels are O(1) magnitudes so
# an absolute epsilon is appropriate.
_EVENT_EPS = 1e-12


def _progressive_fill(problem: AllocationProblem, use_weights: bool) -> tuple[Allocation, int]:
    """Water-fill the problem; returns (per-fragment values, freeze events)."""
    mult = {i: (d.weight if use_weights else 1) for i, d in problem.demands.items()}
    cap = {
        i: (d.magnitude / mult[i] if mult[i] else 0.0)
        for i, d in problem.demands.items()
    }
    values: Allocation = {}
    open_ids = set()
    for i in problem.demands:
        if cap[i] <= 0.0:
            values[i] = 0.0
        else:
            open_ids.add(i)

    frozen_load = {j: 0.0 for j in problem.capacities}
    open_mult = {j: 0 for j in problem.capacities}
    for i in open_ids:
        for j in problem.demands[i].resources:
            open_mult[j] += mult[i]

    events = 0
    level = 0.0
    while open_ids:
        # next freeze is the nearest magnitude cap or resource saturation
        t_next = min(cap[i] for i in open_ids)
        for j, m in open_mult.items():
            if m > 0:
                t_sat = (problem.capacities[j] - frozen_load[j]) / m
                if t_sat < t_next:
                    t_next = t_sat
        level = max(level, t_next)

        to_freeze = {i for i in open_ids if cap[i] <= level + _EVENT_EPS}
        for j, m in open_mult.items():
            if m > 0:
                load_at_level = frozen_load[j] + m * level
                if load_at_level >= problem.capacities[j] - _EVENT_EPS:
                    to_freeze.update(
                        i for i in problem.members(j) if i in open_ids
                    )
        for i in to_freeze:
            value = min(level, cap[i])
            values[i] = value
            open_ids.discard(i)
            for j in problem.demands[i].resources:
                open_mult[j] -= mult[i]
                frozen_load[j] += mult[i] * value
        events += 1
    return values, events


def solve_max_min(problem: AllocationProblem) -> Allocation:
    """Lexicographic max-min allocation, one unit-weight share per demand.

    Weights on the demands are ignored here; use ``solve_weighted_max_min``
    for the fragment semantics.
    """
    values, _ = _progressive_fill(problem, use_weights=False)
    return values


def solve_weighted_max_min(problem: AllocationProblem) -> Allocation:
    """Per-fragment allocation u_i; demand i receives weight * u_i in total."""
    values, _ = _progressive_fill(problem, use_weights=True)
    return values


def total_allocation(problem: AllocationProblem, per_fragment: Mapping) -> Allocation:
    return {i: per_fragment[i] * problem.demands[i].weight for i in problem.demands}


def _check_ids(problem: AllocationProblem, alloc: Mapping) -> None:
    if set(alloc) != set(problem.demands):
        missing = set(problem.demands) - set(alloc)
        extra = set(alloc) - set(problem.demands)
        raise ProblemError(
            f"allocation ids do not match problem demands "
            f"(missing {sorted(map(repr, missing))}, extra {sorted(map(repr, extra))})"
        )


def is_feasible(problem: AllocationProblem, alloc: Mapping, slack: float = 1e-9) -> bool:
    """Non-negative, within per-fragment magnitude, within every capacity."""
    _check_ids(problem, alloc)
    for i, d in problem.demands.items():
        v = alloc[i]
        if v < -slack:
            return False
        if v > d.magnitude / d.weight + slack:
            return False
    for j, c in problem.capacities.items():
        load = sum(alloc[i] * problem.demands[i].weight for i in problem.members(j))
        if load > c + slack:
            return False
    return True


def is_lex_max_min(problem: AllocationProblem, alloc: Mapping, slack: float = 1e-9) -> bool:
    """Definition check: every demand satisfied or maximal at a saturated resource.

    Raises InfeasibleAllocationError when the allocation is not feasible
    within the slack; use is_feasible first when that is an expected outcome.
    """
    _check_ids(problem, alloc)
    if not is_feasible(problem, alloc, slack):
        raise InfeasibleAllocationError("allocation infeasible beyond slack")
    saturated = {}
    for j, c in problem.capacities.items():
        load = sum(alloc[i] * problem.demands[i].weight for i in problem.members(j))
        saturated[j] = load >= c - slack
    for i, d in problem.demands.items():
        if alloc[i] >= d.magnitude / d.weight - slack:
            continue  # satisfied
        blocked = False
        for j in d.resources:
            if not saturated[j]:
                continue
            peers = problem.members(j)
            if peers and alloc[i] >= max(alloc[k] for k in peers) - slack:
                blocked = True
                break
        if not blocked:
            return False
    return True
