use proptest::prelude::*;

use swapgame_core::htlcgame::{SolverOptions, SwapParams};
use swapgame_core::quickswapgame::QuickSwapParams;
use swapgame_sim::cyclic::{check_cyclic, generate, run_cyclic, validate_plan, write_plan_jsonl, CyclicSpec};
use swapgame_sim::engine::Strategy as Play;
use swapgame_sim::plan::Phase;
use swapgame_sim::protocol::{
    build_htlc_instance, build_quickswap_instance, check_properties, montecarlo_htlc, run, StrategyProfile,
};
use swapgame_sim::verdict::Outcome;

fn phase() -> impl Strategy<Value = Phase> {
    prop_oneof![Just(Phase::PremiumLock), Just(Phase::PrincipalLock), Just(Phase::Claim)]
}

fn deviation() -> impl Strategy<Value = Play> {
    prop_oneof![
        Just(Play::Compliant),
        phase().prop_map(|from| Play::Grief { from }),
        phase().prop_map(|phase| Play::Cancel { phase }),
        (phase(), 0.0f64..30.0).prop_map(|(phase, hours)| Play::Delay { phase, hours }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn quickswap_protects_a_compliant_victim(dev in deviation(), alice_deviates in any::<bool>(), seed in any::<u64>()) {
        let inst = build_quickswap_instance(&QuickSwapParams::default()).unwrap();
        let profile = if alice_deviates {
            StrategyProfile { alice: dev, bob: Play::Compliant }
        } else {
            StrategyProfile { alice: Play::Compliant, bob: dev }
        };
        let v = run(&inst, &profile, None, seed).unwrap();
        prop_assert!(v.trace.conserved);
        prop_assert!(v.liveness, "{:?}", v.witnesses);
        prop_assert!(v.safety, "{:?}", v.parties);
        if v.outcome == Outcome::Swapped {
            prop_assert_eq!(v.trace.revealed.len(), 1);
        }
    }

    #[test]
    fn htlc_traces_settle_and_conserve(a in deviation(), b in deviation(), seed in any::<u64>()) {
        let inst = build_htlc_instance(&SwapParams::default()).unwrap();
        let v = run(&inst, &StrategyProfile { alice: a, bob: b }, None, seed).unwrap();
        prop_assert!(v.trace.conserved);
        prop_assert!(v.liveness, "{:?}", v.witnesses);
        let total: f64 = (0..2).map(|p| v.trace.balances[p].iter().sum::<f64>() - v.trace.endowments[p].iter().sum::<f64>()).sum();
        prop_assert!(total.abs() < 1e-12);
    }

    #[test]
    fn cyclic_single_deviator_is_safe(n in 2usize..=5, who in 0usize..5, dev in deviation(), seed in any::<u64>()) {
        let cp = generate(&CyclicSpec::uniform(n)).unwrap();
        let mut profile = vec![Play::Compliant; n];
        profile[who % n] = dev;
        let v = run_cyclic(&cp, &profile, seed).unwrap();
        prop_assert!(v.trace.conserved);
        prop_assert!(v.liveness, "{:?}", v.witnesses);
        prop_assert!(v.safety, "{:?}", v.parties);
    }

    #[test]
    fn cyclic_ladders_validate(n in 2usize..=7, delta in 0.5f64..4.0, spread in 1.0f64..10.0) {
        let mut spec = CyclicSpec::uniform(n);
        spec.delta = delta;
        spec.locktimes = (0..n).map(|i| spec.d + n as f64 * delta + spread * (n - i) as f64).collect();
        let cp = generate(&spec).unwrap();
        prop_assert!(validate_plan(&cp).is_empty());
    }
}

#[test]
fn grid_reports_are_deterministic() {
    let inst = build_quickswap_instance(&QuickSwapParams::default()).unwrap();
    let a = serde_json::to_string(&check_properties(&inst, 9).unwrap().rows).unwrap();
    let b = serde_json::to_string(&check_properties(&inst, 9).unwrap().rows).unwrap();
    assert_eq!(a, b);
}

#[test]
fn cyclic_grid_covers_every_position() {
    let rep = check_cyclic(&generate(&CyclicSpec::uniform(3)).unwrap(), 1).unwrap();
    // Last party decides at three phases, the others at two; five moves each.
    assert_eq!(rep.rows.len(), 1 + 5 * (2 + 2 + 3));
    assert!(rep.all_hold());
}

#[test]
fn plan_export_has_one_record_per_lock() {
    let cp = generate(&CyclicSpec::uniform(4)).unwrap();
    let mut buf = Vec::new();
    write_plan_jsonl(&cp, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let records: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 2 * 4);
    assert_eq!(records[0]["label"], "premium_P3");
    assert_eq!(records[7]["early_refund"], "H2");
}

#[test]
fn montecarlo_is_reproducible() {
    let p = SwapParams::default();
    let o = SolverOptions::default();
    let a = montecarlo_htlc(&p, &o, 2.0, 3.0, 2_000, 42).unwrap();
    let b = montecarlo_htlc(&p, &o, 2.0, 3.0, 2_000, 42).unwrap();
    assert_eq!(a, b);
    assert!(a.z.abs() < 5.0, "{a:?}");
}
