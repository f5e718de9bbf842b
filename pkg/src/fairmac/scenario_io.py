"""Load and save scenarios and allocation problems.

TOML and JSON are accepted on the way in (picked by file extension); output
is always JSON.  Node ids that look like integers are integers: "7" in a
table key means node 7, because neither format allows non-string keys.
"""

import dataclasses
import json
from pathlib import Path

import tomli

from .allocation import AllocationProblem, Demand, ProblemError
from .mac import NodeConfig
from .sim import Scenario, ScriptEvent, TrafficSpec


class SchemaError(ValueError):
    """A scenario or problem file does not match the expected layout."""


def _node_key(k):
    if isinstance(k, str):
        body = k[1:] if k[:1] == "-" else k
        if body.isdigit():
            return int(k)
    return k


def _load_raw(path):
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".toml":
        try:
            return tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise SchemaError(f"{path.name}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path.name}: {exc}") from exc


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise SchemaError(f"{where} must be a table, got {type(data).__name__}")
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise SchemaError(f"unknown {where} field {unknown[0]!r}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: {exc}") from exc


def _script_event(ev):
    if not isinstance(ev, dict):
        raise SchemaError("script entries must be tables")
    unknown = sorted(set(ev) - {"at", "kind", "node", "demand"})
    if unknown:
        raise SchemaError(f"unknown script field {unknown[0]!r}")
    if "node" not in ev:
        raise SchemaError("script entry is missing 'node'")
    try:
        return ScriptEvent(at=float(ev.get("at", 0.0)),
                           kind=str(ev.get("kind", "demand")),
                           node=_node_key(ev["node"]),
                           demand=float(ev.get("demand", 0.0)))
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"bad script entry: {exc}") from exc


_SCALARS = {"seed": int, "n_nodes": int, "range_m": float, "duration": float,
            "speed": float, "warmup": float}


def scenario_from_dict(data) -> Scenario:
    if not isinstance(data, dict):
        raise SchemaError("scenario must be a table")
    allowed = {f.name for f in dataclasses.fields(Scenario)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise SchemaError(f"unknown scenario field {unknown[0]!r}")

    kwargs = {}
    for key, value in data.items():
        try:
            if key == "node_config":
                value = _build(NodeConfig, value, "node_config")
            elif key == "traffic" and value is not None:
                value = _build(TrafficSpec, value, "traffic")
            elif key == "area":
                value = (float(value[0]), float(value[1]))
            elif key == "demands" and value is not None:
                value = {_node_key(k): float(v) for k, v in value.items()}
            elif key == "weights":
                value = {_node_key(k): int(v) for k, v in value.items()}
            elif key == "positions" and value is not None:
                value = {_node_key(k): (float(v[0]), float(v[1]))
                         for k, v in value.items()}
            elif key == "paths":
                value = {_node_key(k): [(float(t), float(x), float(y))
                                        for t, x, y in pts]
                         for k, pts in value.items()}
            elif key == "script":
                value = [_script_event(ev) for ev in value]
            elif key in _SCALARS:
                value = _SCALARS[key](value)
            elif key == "trace":
                value = bool(value)
        except SchemaError:
            raise
        except (TypeError, ValueError, KeyError, IndexError, AttributeError) as exc:
            raise SchemaError(f"bad value for scenario field {key!r}: {exc}") from exc
        kwargs[key] = value

    scenario = Scenario(**kwargs)
    try:
        scenario.validate()
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc
    return scenario


def scenario_to_dict(scenario: Scenario) -> dict:
    data = dataclasses.asdict(scenario)
    for key in ("demands", "weights", "positions", "paths"):
        if data.get(key):
            data[key] = {str(k): v for k, v in data[key].items()}
    return data


def load_scenario(path) -> Scenario:
    return scenario_from_dict(_load_raw(path))


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=2,
                                     sort_keys=True) + "\n", encoding="utf-8")


# ------------------------------------------------------------------ problems

def problem_from_dict(data) -> AllocationProblem:
    if not isinstance(data, dict):
        raise SchemaError("problem must be a table")
    unknown = sorted(set(data) - {"capacities", "demands"})
    if unknown:
        raise SchemaError(f"unknown problem field {unknown[0]!r}")
    if not isinstance(data.get("capacities"), dict):
        raise SchemaError("problem needs a 'capacities' table")
    try:
        capacities = {_node_key(j): float(c)
                      for j, c in data["capacities"].items()}
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"bad capacity: {exc}") from exc

    demands = {}
    for i, spec in (data.get("demands") or {}).items():
        if not isinstance(spec, dict):
            raise SchemaError(f"demand {i!r} must be a table")
        unknown = sorted(set(spec) - {"magnitude", "resources", "weight"})
        if unknown:
            raise SchemaError(f"demand {i!r} has unknown field {unknown[0]!r}")
        for required in ("magnitude", "resources"):
            if required not in spec:
                raise SchemaError(f"demand {i!r} is missing {required!r}")
        try:
            demands[_node_key(i)] = Demand(
                float(spec["magnitude"]),
                frozenset(_node_key(j) for j in spec["resources"]),
                int(spec.get("weight", 1)))
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"bad demand {i!r}: {exc}") from exc

    problem = AllocationProblem(capacities=capacities, demands=demands)
    try:
        problem.validate()
    except ProblemError as exc:
        raise SchemaError(str(exc)) from exc
    return problem


def problem_to_dict(problem: AllocationProblem) -> dict:
    return {
        "capacities": {str(j): float(c) for j, c in problem.capacities.items()},
        "demands": {str(i): {"magnitude": float(d.magnitude),
                             "resources": sorted(str(j) for j in d.resources),
                             "weight": int(d.weight)}
                    for i, d in problem.demands.items()},
    }


def load_problem(path) -> AllocationProblem:
    return problem_from_dict(_load_raw(path))


def save_problem(problem: AllocationProblem, path) -> None:
    Path(path).write_text(json.dumps(problem_to_dict(problem), indent=2,
                                     sort_keys=True) + "\n", encoding="utf-8")
