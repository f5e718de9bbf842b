"""Canned scenario builders used by the sweeps and the acceptance runs."""

import math

from fairmac.presets import (
    chain_scenario,
    convergence_scenario,
    demand_change_scenario,
    mobility_scenario,
    random_scenario,
    table_configs,
)


def test_table_configs_cover_the_grid():
    configs = table_configs()
    assert set(configs) == {"lazy-mac", "lazy-physical",
                            "eager-mac", "eager-physical"}
    assert configs["lazy-physical"].persistence_mode == "lazy"
    assert configs["lazy-physical"].receiver_mode == "physical"
    assert configs["eager-mac"].persistence_mode == "eager"
    assert configs["eager-mac"].receiver_mode == "mac"


def test_convergence_scenario_layout():
    sc = convergence_scenario(seed=1)
    sc.validate()
    assert len(sc.script) == 1
    ev = sc.script[0]
    assert ev.kind == "demand"
    assert ev.at == 2.5
    assert ev.demand == 0.0
    assert sc.demands[ev.node] > 0.0  # a release, not a no-op
    assert ev.node not in sc.paths  # the stepped node must not be the mover
    assert list(sc.paths) == [sc.n_nodes - 1]
    assert sc.demands[sc.n_nodes - 1] > 0.0  # the new link must matter
    loaded = sum(1 for v in sc.demands.values() if v > 0.0)
    assert loaded == round(0.6 * sc.n_nodes)


def test_chain_scenario_geometry():
    for hops in (5, 24):
        sc = chain_scenario(hops)
        sc.validate()
        assert sc.n_nodes == hops + 1
        pts = [sc.positions[i] for i in range(sc.n_nodes)]
        for a, b in zip(pts, pts[1:]):
            assert math.dist(a, b) == 240.0
        for a, b in zip(pts, pts[2:]):
            assert math.dist(a, b) > sc.range_m
        assert all(v == 1.0 for v in sc.demands.values())


def test_demand_change_scenario_is_seed_deterministic():
    a = demand_change_scenario(seed=4)
    b = demand_change_scenario(seed=4)
    assert a.script == b.script
    targets = {demand_change_scenario(seed=s).script[0].node for s in range(12)}
    assert len(targets) > 1


def test_demand_change_scenario_loads_everyone():
    sc = demand_change_scenario(seed=0)
    sc.validate()
    assert all(sc.demands[i] >= 0.2 for i in range(sc.n_nodes))


def test_random_and_mobility_scenarios_validate():
    random_scenario(seed=2).validate()
    sc = mobility_scenario(seed=2)
    sc.validate()
    assert sc.mobility == "waypoint"
    assert sc.speed == 5.0
