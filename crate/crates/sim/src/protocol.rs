//! HTLC and two-party Quick Swap instances, strategy profiles, property
//! grids and the threshold-strategy Monte Carlo.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use swapgame_core::htlcgame::{GameError, HtlcGame, SolverOptions, SwapParams};
use swapgame_core::numerics::Bracket;
use swapgame_core::pricemodel::{PricePath, PriceState};
use swapgame_core::quickswapgame::{QuickSwapGame, QuickSwapParams};

use crate::engine::{run_plan, EngineError, PriceRule, Reject, RunConfig, Strategy, ThresholdRule};
use crate::ledger::{ChainId, Hours, PartyId, RevealPolicy};
use crate::plan::{ChainSpec, HashRole, HashSpec, LockKind, LockPlan, LockSpec, LockStep, Phase};
use crate::verdict::{evaluate, Outcome, SafetyRule, TraceVerdict};

pub const ALICE: PartyId = PartyId(0);
pub const BOB: PartyId = PartyId(1);
pub const CHAIN_A: ChainId = ChainId(0);
pub const CHAIN_B: ChainId = ChainId(1);

/// Delay amounts of the exhaustive property grid, in hours.
pub const GRID_DELAYS: [Hours; 3] = [1.0, 6.0, 12.0];

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error("Monte Carlo needs at least one path")]
    NoPaths,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ProtocolKind {
    Htlc,
    QuickSwap,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProtocolInstance {
    pub kind: ProtocolKind,
    pub params: SwapParams,
    pub quick: Option<QuickSwapParams>,
    pub plan: LockPlan,
}

impl ProtocolInstance {
    /// Nominal timeline t1, t2, ... when nobody waits.
    pub fn schedule(&self) -> Vec<(String, Hours)> {
        let p = &self.params;
        let mut out: Vec<(String, Hours)> =
            self.plan.steps.iter().enumerate().map(|(k, s)| (format!("t{}", k + 1), s.nominal_start)).collect();
        let last = self.plan.steps.last().map_or(0.0, |s| s.nominal_start) + self.plan.step_delay(self.plan.steps.len() - 1);
        out.push((format!("t{}", out.len() + 1), last));
        out.push((format!("t{}", out.len() + 1), last + p.t_eps));
        out
    }

    /// Chain-b coins are worth price / x(y_b,t1) each in A's asset.
    pub fn rates(&self, final_price: Option<f64>) -> Vec<f64> {
        vec![1.0, final_price.map_or(1.0, |x| x / self.params.x_yb_t1)]
    }
}

fn hash(label: &str, role: HashRole, owner: PartyId) -> HashSpec {
    HashSpec { label: label.into(), role, owner }
}

fn two_party_chains(p: &SwapParams) -> Vec<ChainSpec> {
    vec![
        ChainSpec { name: "chain-a".into(), confirm_delay: p.tau_a },
        ChainSpec { name: "chain-b".into(), confirm_delay: p.tau_b },
    ]
}

pub fn build_htlc_instance(params: &SwapParams) -> Result<ProtocolInstance, ProtocolError> {
    params.validate()?;
    if params.t_a <= params.t_b {
        return Err(ProtocolError::Invalid(format!("t_a = {} must exceed t_b = {}", params.t_a, params.t_b)));
    }
    let principal = |label: &str, owner, receiver, chain, amount, locktime| LockSpec {
        label: label.into(),
        owner,
        receiver,
        chain,
        amount,
        kind: LockKind::Principal,
        locktime,
        claim_hash: Some(0),
        release_hashes: Vec::new(),
        early_refund: None,
    };
    let plan = LockPlan {
        parties: vec!["Alice".into(), "Bob".into()],
        chains: two_party_chains(params),
        hashes: vec![hash("H", HashRole::Payment, ALICE)],
        steps: vec![
            LockStep {
                party: ALICE,
                phase: Phase::PrincipalLock,
                nominal_start: 0.0,
                locks: vec![principal("principal_lock_A", ALICE, BOB, CHAIN_A, params.x_a, params.t_a)],
            },
            LockStep {
                party: BOB,
                phase: Phase::PrincipalLock,
                nominal_start: params.tau_a,
                locks: vec![principal("principal_lock_B", BOB, ALICE, CHAIN_B, params.x_yb_t1, params.t_b)],
            },
        ],
        observe_delay: params.t_eps,
        grace: params.tau_b / 2.0,
    };
    Ok(ProtocolInstance { kind: ProtocolKind::Htlc, params: *params, quick: None, plan })
}

pub fn build_quickswap_instance(params: &QuickSwapParams) -> Result<ProtocolInstance, ProtocolError> {
    params.validate()?;
    let b = &params.base;
    if b.t_a <= b.t_b {
        return Err(ProtocolError::Invalid(format!("t_a = {} must exceed t_b = {}", b.t_a, b.t_b)));
    }
    let q = params.q();
    let (h1, h2, h3) = (0, 1, 2);
    let plan = LockPlan {
        parties: vec!["Alice".into(), "Bob".into()],
        chains: two_party_chains(b),
        hashes: vec![
            hash("H1", HashRole::Payment, ALICE),
            hash("H2", HashRole::Cancel(BOB), BOB),
            hash("H3", HashRole::Cancel(ALICE), ALICE),
        ],
        steps: vec![
            LockStep {
                party: BOB,
                phase: Phase::PremiumLock,
                nominal_start: 0.0,
                locks: vec![LockSpec {
                    label: "griefing_premium_lock_B".into(),
                    owner: BOB,
                    receiver: ALICE,
                    chain: CHAIN_B,
                    amount: q,
                    kind: LockKind::Premium,
                    locktime: params.d + params.delta,
                    claim_hash: None,
                    release_hashes: vec![h1, h2],
                    early_refund: None,
                }],
            },
            LockStep {
                party: ALICE,
                phase: Phase::PrincipalLock,
                nominal_start: b.tau_b,
                locks: vec![
                    LockSpec {
                        label: "principal_lock_A".into(),
                        owner: ALICE,
                        receiver: BOB,
                        chain: CHAIN_A,
                        amount: b.x_a,
                        kind: LockKind::Principal,
                        locktime: b.t_a,
                        claim_hash: Some(h1),
                        release_hashes: Vec::new(),
                        early_refund: Some(h2),
                    },
                    LockSpec {
                        label: "griefing_premium_lock_A".into(),
                        owner: ALICE,
                        receiver: BOB,
                        chain: CHAIN_A,
                        amount: 1.5 * q,
                        kind: LockKind::Premium,
                        locktime: params.d,
                        claim_hash: None,
                        release_hashes: vec![h1, h3],
                        early_refund: None,
                    },
                ],
            },
            LockStep {
                party: BOB,
                phase: Phase::PrincipalLock,
                nominal_start: b.tau_b + b.tau_a,
                locks: vec![LockSpec {
                    label: "principal_lock_B".into(),
                    owner: BOB,
                    receiver: ALICE,
                    chain: CHAIN_B,
                    amount: b.x_yb_t1,
                    kind: LockKind::Principal,
                    locktime: b.t_b,
                    claim_hash: Some(h1),
                    release_hashes: Vec::new(),
                    early_refund: Some(h3),
                }],
            },
        ],
        observe_delay: b.t_eps,
        grace: b.tau_b / 2.0,
    };
    Ok(ProtocolInstance { kind: ProtocolKind::QuickSwap, params: *b, quick: Some(*params), plan })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrategyProfile {
    pub alice: Strategy,
    pub bob: Strategy,
}

impl StrategyProfile {
    pub fn compliant() -> Self {
        Self { alice: Strategy::Compliant, bob: Strategy::Compliant }
    }

    pub fn label(&self) -> String {
        format!("A={} B={}", self.alice.label(), self.bob.label())
    }

    fn total_delay(&self, plan: &LockPlan) -> Hours {
        [(&self.alice, ALICE), (&self.bob, BOB)]
            .iter()
            .map(|(s, p)| plan.phases(*p).iter().map(|&ph| s.delay(ph)).sum::<Hours>())
            .sum()
    }
}

/// Executes one profile and evaluates the trace.
pub fn run(
    instance: &ProtocolInstance,
    profile: &StrategyProfile,
    price: Option<&mut PricePath>,
    seed: u64,
) -> Result<TraceVerdict, ProtocolError> {
    let strategies = [profile.alice.clone(), profile.bob.clone()];
    let cfg = RunConfig { seed, reveal: RevealPolicy::Broadcast };
    let trace = run_plan(&instance.plan, &strategies, price, &cfg)?;
    let rates = instance.rates(trace.final_price);
    let compliant = [profile.alice.is_compliant(), profile.bob.is_compliant()];
    Ok(evaluate(&instance.plan, trace, &compliant, &rates, profile.total_delay(&instance.plan), SafetyRule::NetValue))
}

/// Every deviation of one party against a compliant other, plus the
/// all-compliant profile.
pub fn strategy_grid(instance: &ProtocolInstance) -> Vec<StrategyProfile> {
    let mut out = vec![StrategyProfile::compliant()];
    for deviator in [ALICE, BOB] {
        let mut moves = Vec::new();
        for phase in instance.plan.phases(deviator) {
            moves.push(Strategy::Grief { from: phase });
            moves.push(Strategy::Cancel { phase });
            for hours in GRID_DELAYS {
                moves.push(Strategy::Delay { phase, hours });
            }
        }
        for m in moves {
            out.push(if deviator == ALICE {
                StrategyProfile { alice: m, bob: Strategy::Compliant }
            } else {
                StrategyProfile { alice: Strategy::Compliant, bob: m }
            });
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct ProfileRow {
    pub profile: StrategyProfile,
    pub outcome: Outcome,
    pub correctness: Option<bool>,
    pub safety: bool,
    pub liveness: bool,
    pub net_alice: f64,
    pub net_bob: f64,
    pub witnesses: Vec<String>,
    pub end_time: Hours,
}

#[derive(Clone, Debug, Serialize)]
pub struct PropertyReport {
    pub kind: ProtocolKind,
    pub rows: Vec<ProfileRow>,
}

impl PropertyReport {
    pub fn all_correct(&self) -> bool {
        self.rows.iter().all(|r| r.correctness != Some(false))
    }

    pub fn all_safe(&self) -> bool {
        self.rows.iter().all(|r| r.safety)
    }

    pub fn all_live(&self) -> bool {
        self.rows.iter().all(|r| r.liveness)
    }

    pub fn row(&self, alice: &Strategy, bob: &Strategy) -> Option<&ProfileRow> {
        self.rows.iter().find(|r| &r.profile.alice == alice && &r.profile.bob == bob)
    }

    /// Profiles in which a compliant victim had coins locked by a griefer
    /// (the two griefing scenarios of the HTLC swap).
    pub fn grief_rows(&self) -> Vec<&ProfileRow> {
        let victim_locked = |r: &&ProfileRow| {
            matches!(r.profile.bob, Strategy::Grief { from: Phase::PrincipalLock })
                || matches!(r.profile.alice, Strategy::Grief { from: Phase::Claim })
        };
        self.rows.iter().filter(victim_locked).collect()
    }
}

/// Runs the whole strategy grid, one world per profile.
pub fn check_properties(instance: &ProtocolInstance, seed: u64) -> Result<PropertyReport, ProtocolError> {
    let rows = strategy_grid(instance)
        .into_par_iter()
        .map(|profile| {
            let v = run(instance, &profile, None, seed)?;
            let mut witnesses = v.witnesses.clone();
            for pv in &v.parties {
                witnesses.extend(pv.witnesses.iter().cloned());
            }
            Ok(ProfileRow {
                outcome: v.outcome,
                correctness: v.correctness,
                safety: v.safety,
                liveness: v.liveness,
                net_alice: v.net_value(ALICE),
                net_bob: v.net_value(BOB),
                witnesses,
                end_time: v.trace.end_time,
                profile,
            })
        })
        .collect::<Result<Vec<_>, ProtocolError>>()?;
    Ok(PropertyReport { kind: instance.kind, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McCell {
    pub kind: ProtocolKind,
    pub x_a: f64,
    pub t: Hours,
    pub t_prime: Hours,
    pub analytic: f64,
    pub paths: u64,
    pub successes: u64,
    pub empirical: f64,
    pub std_error: f64,
    pub z: f64,
}

impl McCell {
    fn new(kind: ProtocolKind, x_a: f64, t: Hours, t_prime: Hours, analytic: f64, paths: u64, successes: u64) -> Self {
        let empirical = successes as f64 / paths as f64;
        let std_error = (analytic * (1.0 - analytic) / paths as f64).sqrt();
        let z = if std_error > 0.0 {
            (empirical - analytic) / std_error
        } else if empirical == analytic {
            0.0
        } else {
            f64::INFINITY
        };
        Self { kind, x_a, t, t_prime, analytic, paths, successes, empirical, std_error, z }
    }
}

fn path_seed(seed: u64, i: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed.wrapping_add(i.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn band_rule(band: Option<Bracket>) -> PriceRule {
    match band {
        Some(b) => PriceRule::Within { lower: b.lo, upper: b.hi },
        None => PriceRule::Within { lower: f64::INFINITY, upper: f64::INFINITY },
    }
}

fn count_successes<F>(paths: u64, seed: u64, one: F) -> Result<u64, ProtocolError>
where
    F: Fn(u64) -> Result<bool, ProtocolError> + Sync,
{
    if paths == 0 {
        return Err(ProtocolError::NoPaths);
    }
    (0..paths)
        .into_par_iter()
        .map(|i| one(path_seed(seed, i)).map(u64::from))
        .try_reduce(|| 0, |a, b| Ok(a + b))
}

fn uniform(seed: u64) -> (f64, f64) {
    let to_unit = |x: u64| (x >> 11) as f64 / (1u64 << 53) as f64;
    (to_unit(path_seed(seed, 101)), to_unit(path_seed(seed, 202)))
}

/// Threshold-strategy HTLC runs at delays (T, T'); returns the success
/// frequency against the analytic if-initiated SR.
pub fn montecarlo_htlc(
    params: &SwapParams,
    opts: &SolverOptions,
    t: Hours,
    t_prime: Hours,
    paths: u64,
    seed: u64,
) -> Result<McCell, ProtocolError> {
    let game = HtlcGame::new(*params, *opts)?;
    let band = game.continuation_band_t2(t)?;
    let x3 = game.claim_threshold_t3();
    let analytic = game.initiated_rate_with_band(band, t, t_prime)?.raw;
    let instance = build_htlc_instance(params)?;
    let anchor = PriceState::at_origin(params.x_yb_t1);
    let successes = count_successes(paths, seed, |s| {
        let (ua, ub) = uniform(s);
        let alice = if ua < params.theta_1 {
            Strategy::Threshold(vec![ThresholdRule {
                phase: Phase::Claim,
                delay: t,
                accept: PriceRule::AtLeast(x3),
                reject: Reject::Stop,
            }])
        } else {
            Strategy::Grief { from: Phase::Claim }
        };
        let bob = if ub < params.theta_2 {
            Strategy::Threshold(vec![ThresholdRule {
                phase: Phase::PrincipalLock,
                delay: t_prime,
                accept: band_rule(band),
                reject: Reject::Stop,
            }])
        } else {
            Strategy::Grief { from: Phase::PrincipalLock }
        };
        let mut path = PricePath::new(anchor, params.gbm, s);
        let v = run(&instance, &StrategyProfile { alice, bob }, Some(&mut path), s)?;
        Ok(v.outcome == Outcome::Swapped)
    })?;
    Ok(McCell::new(ProtocolKind::Htlc, params.x_a, t, t_prime, analytic, paths, successes))
}

/// Threshold-strategy Quick Swap runs against the analytic SR.
pub fn montecarlo_quickswap(
    params: &QuickSwapParams,
    opts: &SolverOptions,
    paths: u64,
    seed: u64,
) -> Result<McCell, ProtocolError> {
    let game = QuickSwapGame::new(*params, *opts)?;
    let band = game.continuation_band_t3()?;
    let x4 = game.claim_threshold_t4();
    let analytic = game.success_rate_with_band(band)?.raw;
    let instance = build_quickswap_instance(params)?;
    let b = params.base;
    // A locks at t2 = τb holding the reference price.
    let anchor = PriceState::new(b.x_yb_t1, b.tau_b).map_err(GameError::from)?;
    let successes = count_successes(paths, seed, |s| {
        let (ua, ub) = uniform(s);
        let alice = if ua < b.theta_1 {
            Strategy::Threshold(vec![ThresholdRule {
                phase: Phase::Claim,
                delay: 0.0,
                accept: PriceRule::AtLeast(x4),
                reject: Reject::Cancel,
            }])
        } else {
            Strategy::Grief { from: Phase::Claim }
        };
        let bob = if ub < b.theta_2 {
            Strategy::Threshold(vec![ThresholdRule {
                phase: Phase::PrincipalLock,
                delay: 0.0,
                accept: band_rule(band),
                reject: Reject::Cancel,
            }])
        } else {
            Strategy::Grief { from: Phase::PrincipalLock }
        };
        let mut path = PricePath::new(anchor, b.gbm, s);
        let v = run(&instance, &StrategyProfile { alice, bob }, Some(&mut path), s)?;
        Ok(v.outcome == Outcome::Swapped)
    })?;
    Ok(McCell::new(ProtocolKind::QuickSwap, b.x_a, 0.0, 0.0, analytic, paths, successes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::BranchRole;

    fn qs() -> ProtocolInstance {
        build_quickswap_instance(&QuickSwapParams::default()).unwrap()
    }

    fn htlc() -> ProtocolInstance {
        build_htlc_instance(&SwapParams::default()).unwrap()
    }

    fn spent(v: &TraceVerdict, label: &str) -> (BranchRole, PartyId, Hours) {
        let s = v.trace.lock(label).unwrap().spent.clone().unwrap();
        (s.role, s.claimant, s.broadcast)
    }

    #[test]
    fn htlc_compliant_swap_timeline() {
        let v = run(&htlc(), &StrategyProfile::compliant(), None, 1).unwrap();
        assert_eq!(v.outcome, Outcome::Swapped);
        assert_eq!(v.correctness, Some(true));
        assert_eq!(spent(&v, "principal_lock_B"), (BranchRole::Claim, ALICE, 6.0));
        assert_eq!(spent(&v, "principal_lock_A"), (BranchRole::Claim, BOB, 7.0));
        assert_eq!(htlc().schedule().iter().map(|s| s.1).collect::<Vec<_>>(), vec![0.0, 3.0, 6.0, 7.0]);
    }

    #[test]
    fn quickswap_compliant_swap_releases_both_premiums() {
        let v = run(&qs(), &StrategyProfile::compliant(), None, 1).unwrap();
        assert_eq!(v.outcome, Outcome::Swapped);
        assert_eq!(spent(&v, "principal_lock_B"), (BranchRole::Claim, ALICE, 9.0));
        assert_eq!(spent(&v, "griefing_premium_lock_A"), (BranchRole::Release, ALICE, 9.0));
        assert_eq!(spent(&v, "principal_lock_A"), (BranchRole::Claim, BOB, 10.0));
        assert_eq!(spent(&v, "griefing_premium_lock_B"), (BranchRole::Release, BOB, 10.0));
        assert_eq!(v.trace.revealed.len(), 1);
        assert_eq!(v.net_value(ALICE), 0.0);
        assert_eq!(v.net_value(BOB), 0.0);
    }

    #[test]
    fn quickswap_cancel_by_alice_unwinds_every_lock() {
        let p = StrategyProfile { alice: Strategy::Cancel { phase: Phase::Claim }, bob: Strategy::Compliant };
        let v = run(&qs(), &p, None, 1).unwrap();
        assert_eq!(v.outcome, Outcome::Cancelled);
        assert_eq!(spent(&v, "griefing_premium_lock_A"), (BranchRole::Release, ALICE, 9.0));
        assert_eq!(spent(&v, "principal_lock_B"), (BranchRole::EarlyRefund, BOB, 10.0));
        assert_eq!(spent(&v, "griefing_premium_lock_B"), (BranchRole::Release, BOB, 10.0));
        assert_eq!(spent(&v, "principal_lock_A"), (BranchRole::EarlyRefund, ALICE, 11.0));
        assert!(v.safety && v.liveness);
        assert_eq!(v.trace.balances, v.trace.endowments);
    }

    #[test]
    fn quickswap_bob_griefing_pays_alice_the_premium() {
        let p = StrategyProfile { alice: Strategy::Compliant, bob: Strategy::Grief { from: Phase::PrincipalLock } };
        let v = run(&qs(), &p, None, 1).unwrap();
        let q = QuickSwapParams::default().q();
        assert_eq!(v.outcome, Outcome::Griefed);
        assert_eq!(spent(&v, "griefing_premium_lock_A"), (BranchRole::Release, ALICE, 9.0));
        assert_eq!(spent(&v, "griefing_premium_lock_B"), (BranchRole::Timeout, ALICE, 14.0));
        assert!((v.net_value(ALICE) - q).abs() < 1e-12);
        assert!(v.safety && v.liveness);
    }

    #[test]
    fn quickswap_alice_griefing_after_all_locks_costs_half_a_premium() {
        let p = StrategyProfile { alice: Strategy::Grief { from: Phase::Claim }, bob: Strategy::Compliant };
        let v = run(&qs(), &p, None, 1).unwrap();
        let q = QuickSwapParams::default().q();
        assert_eq!(spent(&v, "griefing_premium_lock_A"), (BranchRole::Timeout, BOB, 13.0));
        assert!((v.net_value(ALICE) + 0.5 * q).abs() < 1e-12);
        assert!((v.net_value(BOB) - 0.5 * q).abs() < 1e-12);
        assert!(v.safety && v.liveness);
    }

    #[test]
    fn htlc_grief_leaves_victims_uncompensated() {
        let rep = check_properties(&htlc(), 3).unwrap();
        assert!(rep.all_correct() && rep.all_live());
        assert!(!rep.all_safe());
        let grief = rep.grief_rows();
        assert_eq!(grief.len(), 2);
        assert!(grief.iter().all(|r| !r.safety && r.outcome == Outcome::Griefed));
        for r in rep.rows.iter().filter(|r| !r.safety) {
            assert!(r.witnesses.iter().any(|w| w.contains("without compensation")), "{}", r.profile.label());
        }
    }

    #[test]
    fn quickswap_grid_is_correct_safe_and_live() {
        let rep = check_properties(&qs(), 3).unwrap();
        let bad: Vec<_> = rep.rows.iter().filter(|r| !r.safety || !r.liveness).map(|r| r.profile.label()).collect();
        assert!(bad.is_empty(), "{bad:?}");
        assert!(rep.all_correct());
        assert_eq!(rep.rows.len(), 1 + 2 * 5 + 3 * 5);
    }

    #[test]
    fn quickswap_requires_t_a_above_t_b() {
        let mut p = QuickSwapParams::default();
        p.base.t_b = p.base.t_a;
        assert!(build_quickswap_instance(&p).is_err());
    }

    #[test]
    fn montecarlo_rejects_zero_paths() {
        let err = montecarlo_quickswap(&QuickSwapParams::default(), &SolverOptions::default(), 0, 1);
        assert!(matches!(err, Err(ProtocolError::NoPaths)));
    }

    #[test]
    fn path_seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..10_000).map(|i| path_seed(7, i)).collect();
        assert_eq!(seeds.len(), 10_000);
    }
}
