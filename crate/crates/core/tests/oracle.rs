//! Two-bus single-phase instance against an exact AC power flow.

mod common;

use common::*;
use num_complex::Complex64;
use p2pgrid_core::conic::VarKey;
use p2pgrid_core::{assemble, Phase, RunOutcome};
use serde_json::json;

/// Receiving-end voltage of a single line fed at `v0` and loaded with `s`,
/// by Newton iteration on the rectangular components.
fn newton(v0: f64, z: Complex64, s: Complex64) -> Complex64 {
    let mismatch = |v: Complex64| -> [f64; 2] {
        let i = (v0 - v) / z;
        let d = v * i.conj() - s;
        [d.re, d.im]
    };
    let mut v = Complex64::new(v0, 0.0);
    for _ in 0..50 {
        let f = mismatch(v);
        if f[0].abs().max(f[1].abs()) < 1e-15 {
            break;
        }
        let h = 1e-7;
        let fe = mismatch(v + Complex64::new(h, 0.0));
        let ff = mismatch(v + Complex64::new(0.0, h));
        let j = [
            [(fe[0] - f[0]) / h, (ff[0] - f[0]) / h],
            [(fe[1] - f[1]) / h, (ff[1] - f[1]) / h],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let de = (j[1][1] * f[0] - j[0][1] * f[1]) / det;
        let df = (j[0][0] * f[1] - j[1][0] * f[0]) / det;
        v -= Complex64::new(de, df);
    }
    v
}

struct AcPoint {
    fp: f64,
    fq: f64,
    a: f64,
    v: f64,
}

fn ac(v0: f64, z: Complex64, s: Complex64) -> AcPoint {
    let v2 = newton(v0, z, s);
    let i = (v0 - v2) / z;
    let s0 = v0 * i.conj();
    AcPoint {
        fp: s0.re,
        fq: s0.im,
        a: i.norm_sqr(),
        v: v2.norm_sqr(),
    }
}

fn value(o: &RunOutcome, key: VarKey) -> f64 {
    o.solution.value(&o.problem, &key).unwrap()
}

fn assert_matches(o: &RunOutcome, ac: &AcPoint) {
    let t = 0;
    let phase = Phase::A;
    let fp = value(o, VarKey::FlowP { t, line: 0, phase });
    let fq = value(o, VarKey::FlowQ { t, line: 0, phase });
    let a = value(o, VarKey::Current { t, line: 0, phase });
    let v = value(o, VarKey::Voltage { t, node: 1, phase });
    for (name, got, want) in [("fp", fp, ac.fp), ("fq", fq, ac.fq), ("a", a, ac.a), ("v", v, ac.v)] {
        assert!((got - want).abs() < 1e-5, "{name}: socp {got} vs newton {want}");
    }
}

#[test]
fn lossy_line_without_agents_matches_newton() {
    let feeder = two_node_feeder(0.01, 0.0, 500.0, 0.0);
    let spec = with_defaults("two-node", feeder.clone(), no_agents(&feeder));
    let o = solve(spec);
    assert!(o.solution.is_optimal());
    let oracle = ac(1.0, Complex64::new(0.01, 0.0), Complex64::new(0.5, 0.0));
    assert!((oracle.fp - 0.5025).abs() < 1e-3);
    assert_matches(&o, &oracle);
    let want = 50.0 * oracle.fp;
    assert!(rel_diff(o.solution.objective_value, want) < 1e-6);
    assert!(o.soc_gap.as_ref().unwrap().max_gap <= 1e-6);
}

#[test]
fn variable_enumeration() {
    // v at the substation (3 phases) and at node 2 (phase a): 4
    // fp, fq, a on the single line-phase: 3
    // P_UG and Q_UG at the substation (3 phases each): 6
    // P_shd at node 2 phase a: 1
    let feeder = two_node_feeder(0.01, 0.0, 500.0, 0.0);
    let spec = with_defaults("two-node", feeder.clone(), no_agents(&feeder));
    let problem = assemble(&spec).unwrap();
    assert_eq!(problem.num_vars(), 14);
    // balance rows: 3 active + 3 reactive at the substation, 1 + 1 at node 2;
    // one voltage drop and three source-voltage rows
    assert_eq!(problem.equalities().len(), 12);
    // sending, receiving and relaxation cones on the line-phase
    assert_eq!(problem.cones().len(), 3);
}

/// Cost of dispatching a prosumer at node 2 with (p, q), the substation
/// covering the remainder.
fn dispatch_cost(z: Complex64, load: Complex64, p: f64, q: f64) -> (f64, AcPoint) {
    let point = ac(1.0, z, load - Complex64::new(p, q));
    (20.0 * p + 50.0 * point.fp, point)
}

#[test]
fn dispatch_matches_grid_search() {
    let (r, x, s_inv): (f64, f64, f64) = (0.02, 0.04, 0.3);
    let z = Complex64::new(r, x);
    let load = Complex64::new(0.6, 0.2);
    let feeder = two_node_feeder(r, x, 600.0, 200.0);
    let agents = agents(
        json!({
            "prosumers": [{"id": "G", "node": 2, "phases": "a", "p_max_kw": 300,
                "q_min_kvar": -300, "q_max_kvar": 300, "s_inv_kva": 300, "offer_usd_per_mwh": 20}],
            "consumers": [{"id": "L", "node": 2, "phases": "a", "demand_source": "feeder"}]
        }),
        &feeder,
    );
    let o = solve(with_defaults("two-node-dispatch", feeder, agents));
    assert!(o.solution.is_optimal());

    // coarse grid over the inverter disc
    let step = 0.005;
    let n = (s_inv / step).round() as i32;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=n {
        for j in -n..=n {
            let (p, q) = (i as f64 * step, j as f64 * step);
            if p * p + q * q > s_inv * s_inv + 1e-12 {
                continue;
            }
            let (c, _) = dispatch_cost(z, load, p, q);
            if c < best.0 {
                best = (c, p, q);
            }
        }
    }
    // the cheaper local unit saturates its rating, so refine along the rim
    let cost_at = |theta: f64| dispatch_cost(z, load, s_inv * theta.cos(), s_inv * theta.sin()).0;
    let centre = best.2.atan2(best.1);
    let (mut lo, mut hi) = (centre - 0.05, centre + 0.05);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        if cost_at(m1) < cost_at(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let theta = 0.5 * (lo + hi);
    let (p, q) = (s_inv * theta.cos(), s_inv * theta.sin());
    let (cost, point) = dispatch_cost(z, load, p, q);
    assert!(cost <= best.0 + 1e-12, "rim optimum {cost} worse than grid {}", best.0);

    let gp = value(&o, VarKey::ProsumerP { t: 0, prosumer: 0, phase: Phase::A });
    let gq = value(&o, VarKey::ProsumerQ { t: 0, prosumer: 0, phase: Phase::A });
    assert!((gp - p).abs() < 1e-5, "prosumer p {gp} vs {p}");
    assert!((gq - q).abs() < 1e-5, "prosumer q {gq} vs {q}");
    assert_matches(&o, &point);
    assert!(
        rel_diff(o.solution.objective_value, cost) < 1e-6,
        "objective {} vs oracle {cost}",
        o.solution.objective_value
    );
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

    #[test]
    fn random_single_lines_match_newton(
        r in 0.001f64..0.05,
        x in 0.0f64..0.05,
        p in 0.05f64..0.8,
        q in 0.0f64..0.3,
    ) {
        let feeder = two_node_feeder(r, x, p * 1000.0, q * 1000.0);
        let o = solve(with_defaults("two-node", feeder.clone(), no_agents(&feeder)));
        proptest::prop_assert!(o.solution.is_optimal());
        let oracle = ac(1.0, Complex64::new(r, x), Complex64::new(p, q));
        assert_matches(&o, &oracle);
        proptest::prop_assert!(rel_diff(o.solution.objective_value, 50.0 * oracle.fp) < 1e-6);
    }
}
