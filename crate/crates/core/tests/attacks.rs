mod common;

use common::*;
use p2pgrid_core::{
    apply_attacks, apply_demand_inflation, apply_line_outage, apply_price_tamper, load_scenario, AttackSpec, Error,
    ScenarioSpec,
};
use proptest::prelude::*;
use serde_json::json;

fn base() -> ScenarioSpec {
    load_scenario(scenario_path("ieee13_pre")).unwrap()
}

#[test]
fn shipped_coordinated_attack_contents() {
    let spec = load_scenario(scenario_path("ieee13_coord_attack")).unwrap();
    assert_eq!(
        spec.attacks,
        vec![AttackSpec::price_tamper("P13", 45.0), AttackSpec::demand_inflation("C7", 1.25)]
    );
    let applied = apply_attacks(&spec).unwrap();
    let p13 = applied.agents.prosumer_index("P13").unwrap();
    assert_eq!(applied.agents.prosumers[p13].offer_price, 45.0);
    assert!(applied.attacks.is_empty());
    assert_eq!(applied.applied.len(), 2);
}

#[test]
fn attacks_leave_the_input_untouched() {
    let spec = base();
    let before = spec.clone();
    let _ = apply_price_tamper(&spec, "P13", 45.0).unwrap();
    let _ = apply_demand_inflation(&spec, "C7", 1.25).unwrap();
    let _ = apply_line_outage(&spec, "2-7").unwrap();
    assert_eq!(spec.agents, before.agents);
    assert_eq!(spec.feeder, before.feeder);
}

#[test]
fn information_attacks_keep_the_network() {
    let spec = base();
    let a = apply_price_tamper(&spec, "P13", 45.0).unwrap();
    let b = apply_demand_inflation(&spec, "C7", 1.25).unwrap();
    assert_eq!(a.feeder, spec.feeder);
    assert_eq!(b.feeder, spec.feeder);

    let p13 = spec.agents.prosumer_index("P13").unwrap();
    let mut expected = spec.agents.clone();
    expected.prosumers[p13].offer_price = 45.0;
    assert_eq!(a.agents.prosumers, expected.prosumers);
    assert_eq!(a.agents.consumers, spec.agents.consumers);

    let c7 = spec.agents.consumer_index("C7").unwrap();
    for k in 0..3 {
        let d0 = spec.agents.consumers[c7].demand[k];
        assert_eq!(b.agents.consumers[c7].demand[k], d0 * 1.25);
        assert_eq!(b.agents.consumers[c7].true_demand[k], d0);
    }
}

#[test]
fn no_op_attacks() {
    let spec = base();
    let p13 = spec.agents.prosumer_index("P13").unwrap();
    let price = spec.agents.prosumers[p13].offer_price;
    let a = apply_price_tamper(&spec, "P13", price).unwrap();
    assert_eq!(a.agents, spec.agents);
    let b = apply_demand_inflation(&spec, "C7", 1.0).unwrap();
    assert_eq!(b.agents, spec.agents);
}

#[test]
fn order_does_not_matter() {
    let mut spec = base();
    let attacks = vec![
        AttackSpec::price_tamper("P13", 45.0),
        AttackSpec::demand_inflation("C7", 1.25),
        AttackSpec::line_outage("2-7"),
    ];
    spec.attacks = attacks.clone();
    let forward = apply_attacks(&spec).unwrap();
    spec.attacks = attacks.into_iter().rev().collect();
    let backward = apply_attacks(&spec).unwrap();
    assert_eq!(forward.feeder, backward.feeder);
    assert_eq!(forward.agents, backward.agents);
}

#[test]
fn rejected_attacks() {
    let spec = base();
    assert!(matches!(apply_price_tamper(&spec, "nobody", 45.0), Err(Error::Attack(_))));
    assert!(apply_price_tamper(&spec, "P13", 0.0).is_err());
    assert!(apply_demand_inflation(&spec, "C7", 0.0).is_err());
    assert!(apply_demand_inflation(&spec, "P13", 1.2).is_err());
    assert!(apply_line_outage(&spec, "9-99").is_err());
    let out = apply_line_outage(&spec, "2-7").unwrap();
    assert!(apply_line_outage(&out, "2-7").is_err());

    let mut twice = spec.clone();
    twice.attacks = vec![AttackSpec::price_tamper("P13", 45.0), AttackSpec::price_tamper("P13", 40.0)];
    assert!(apply_attacks(&twice).is_err());
}

#[test]
fn outage_creates_the_expected_island() {
    let spec = apply_line_outage(&base(), "2-7").unwrap();
    let net = &spec.feeder.network;
    let mut island: Vec<u32> = net
        .topology()
        .islanded(net.substation)
        .into_iter()
        .map(|n| net.nodes[n].id)
        .collect();
    island.sort();
    assert_eq!(island, vec![7, 8, 9, 10, 11, 12, 13]);
    let p13 = spec.agents.prosumer_index("P13").unwrap();
    let in_island = |n: usize| island.contains(&net.nodes[n].id);
    assert!(in_island(spec.agents.prosumers[p13].node));
    assert!(spec.agents.prosumers.iter().filter(|p| in_island(p.node)).count() == 1);
}

#[test]
fn unloaded_leaf_outage_keeps_the_objective() {
    let spec = base();
    let net = &spec.feeder.network;
    let leaf = net.node_index(12).unwrap();
    let (p, q) = spec.feeder.load_matrix();
    assert!(p[leaf].iter().chain(&q[leaf]).all(|&x| x == 0.0));
    assert!(net.topology().children[leaf].is_empty());
    let line = net.lines.iter().find(|l| l.to == leaf).unwrap().id.clone();
    let pre = solve(spec.clone()).solution.objective_value;
    let post = solve(apply_line_outage(&spec, &line).unwrap()).solution.objective_value;
    assert!(rel_diff(post, pre) < 1e-6, "{pre} vs {post}");
}

/// Island {3} behind an outaged line, fed by a 200 kW unit against a
/// 500 kW unity power factor load.
fn island_case(voll: f64) -> ScenarioSpec {
    let m = json!([[0.01, 0, 0], [0, 0.01, 0], [0, 0, 0.01]]);
    let feeder = feeder(json!({
        "nodes": [{"id": 1}, {"id": 2}, {"id": 3, "loads": {"a": {"p": 500, "q": 0}}}],
        "lines": [
            {"from": 1, "to": 2, "R": m, "X": m, "s_limit": 2000},
            {"from": 2, "to": 3, "R": m, "X": m, "s_limit": 2000}
        ],
        "substation": 1, "base_kva": 1000, "base_kv": 1, "v_min": 0.9, "v_max": 1.1
    }));
    let agents = agents(
        json!({
            "prosumers": [{"id": "G", "node": 3, "phases": "a", "p_max_kw": 200,
                "q_min_kvar": -100, "q_max_kvar": 100, "s_inv_kva": 250, "offer_usd_per_mwh": 20}],
            "consumers": [{"id": "L", "node": 3, "phases": "a", "demand_source": "feeder"}]
        }),
        &feeder,
    );
    let mut spec = with_defaults("island", feeder, agents);
    spec.voll = voll;
    apply_line_outage(&spec, "2-3").unwrap()
}

#[test]
fn island_deficit_is_shed_at_voll() {
    let o = solve(island_case(2000.0));
    let r = o.settlement.as_ref().unwrap();
    assert!((r.total_curtailment_mw - 0.3).abs() < 1e-6, "{}", r.total_curtailment_mw);
    let spec = &o.spec;
    let n3 = spec.feeder.network.node_index(3).unwrap();
    let price = o.dlmp.as_ref().unwrap().get(0, n3, p2pgrid_core::Phase::A).unwrap();
    assert!(rel_diff(price, 2000.0) < 1e-3, "island price {price}");
}

#[test]
fn higher_voll_never_sheds_more() {
    let pre = load_scenario(scenario_path("ieee13_lineout")).unwrap();
    let mut shed = Vec::new();
    for voll in [500.0, 2000.0, 10000.0] {
        let mut spec = apply_attacks(&pre).unwrap();
        spec.voll = voll;
        let o = solve(spec);
        shed.push(o.settlement.unwrap().total_curtailment_mw);
    }
    assert!(shed[1] <= shed[0] + 1e-6 && shed[2] <= shed[1] + 1e-6, "{shed:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn inflation_never_lowers_cost(factor in 1.0f64..2.0, target in 0usize..3) {
        let feeder = copper_plate(&[200.0, 300.0, 250.0]);
        let agents = agents(
            json!({
                "prosumers": [{"id": "G", "node": 2, "phases": "a", "p_max_kw": 400,
                    "q_min_kvar": -100, "q_max_kvar": 100, "s_inv_kva": 500, "offer_usd_per_mwh": 30}],
                "consumers": [
                    {"id": "C2", "node": 2, "phases": "a", "demand_source": "feeder"},
                    {"id": "C3", "node": 3, "phases": "a", "demand_source": "feeder"},
                    {"id": "C4", "node": 4, "phases": "a", "demand_source": "feeder"}
                ]
            }),
            &feeder,
        );
        let spec = with_defaults("copper", feeder, agents);
        let id = ["C2", "C3", "C4"][target];
        let pre = solve(spec.clone()).solution.objective_value;
        let post = solve(apply_demand_inflation(&spec, id, factor).unwrap()).solution.objective_value;
        prop_assert!(post >= pre - 1e-7, "{} < {}", post, pre);
    }
}
