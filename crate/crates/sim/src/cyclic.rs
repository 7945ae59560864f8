//! n-party cyclic Quick Swap: plan generation, structural validation and
//! execution.
//!
//! Parties are `P0..P{n-1}` and `P_i` pays `P_{i+1 mod n}`. Chain `i` carries
//! `P_i`'s principal and griefing premium. `P0` owns the payment hash; every
//! party owns one cancellation hash. A principal can be refunded early with
//! the predecessor's cancellation preimage, a premium released with the
//! payment preimage or the owner's own cancellation preimage.
//!
//! Locking order:
//! - step 0: `P{n-1}` locks premium `c(a0·T0)` for `D + (n-1)Δ`, payable to `P0`;
//! - step `i+1`: `P_i` locks principal `a_i` for `T_i` and premium
//!   `c(a_{i+1}·T_{i+1})` for `D + (n-2-i)Δ`, payable to `P_{i+1}`;
//! - step `n`: `P{n-1}` locks principal `a_{n-1}` for `T_{n-1}`.
//!
//! Each step starts one confirmation of the previous step's chain later.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use swapgame_core::quickswapgame::QuickSwapParams;

use crate::engine::{run_plan, EngineError, RunConfig, Strategy};
use crate::ledger::{ChainId, Coins, Hours, PartyId, RevealPolicy};
use crate::plan::{ChainSpec, HashRole, HashSpec, LockKind, LockPlan, LockSpec, LockStep, Phase};
use crate::protocol::GRID_DELAYS;
use crate::verdict::{evaluate, Outcome, SafetyRule, TraceVerdict};

const LADDER_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CyclicSpec {
    pub n: usize,
    /// Principal `a_i` of `P_i`, in chain `i` coins.
    pub amounts: Vec<Coins>,
    /// Confirmation delay `τ_i` of chain `i`.
    pub confirm_delays: Vec<Hours>,
    /// Principal locktime `T_i` of `P_i`.
    pub locktimes: Vec<Hours>,
    pub d: Hours,
    pub delta: Hours,
    /// Premium rate: `c(v·t) = ρ·v·t`.
    pub rho: f64,
    pub t_eps: Hours,
}

#[derive(Debug, Error)]
pub enum CyclicError {
    #[error("invalid cyclic spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl CyclicSpec {
    /// Equal amounts and delays, `T_{n-1} = 24 + 6(n-2)` and a 24 hour spread
    /// up to `T_0`; D = 10, Δ = 4, ρ = 0.001.
    pub fn uniform(n: usize) -> Self {
        let n_ = n.max(2);
        let last = 24.0 + 6.0 * (n_ as f64 - 2.0);
        let step = 24.0 / (n_ as f64 - 1.0);
        Self {
            n,
            amounts: vec![2.0; n],
            confirm_delays: vec![3.0; n],
            locktimes: (0..n).map(|i| last + step * (n_ - 1 - i.min(n_ - 1)) as f64).collect(),
            d: 10.0,
            delta: 4.0,
            rho: 0.001,
            t_eps: 1.0,
        }
    }

    /// The two-party special case with the wiring of the Quick Swap parameters.
    pub fn from_quickswap(p: &QuickSwapParams) -> Self {
        let b = &p.base;
        Self {
            n: 2,
            amounts: vec![b.x_a, b.x_yb_t1],
            confirm_delays: vec![b.tau_a, b.tau_b],
            locktimes: vec![b.t_a, b.t_b],
            d: p.d,
            delta: p.delta,
            rho: p.rho,
            t_eps: b.t_eps,
        }
    }

    /// Checks the invariants, naming the first inequality that fails.
    pub fn validate(&self) -> Result<(), CyclicError> {
        let bad = |m: String| Err(CyclicError::Invalid(m));
        let n = self.n;
        if n < 2 {
            return bad(format!("n = {n} < 2"));
        }
        for (name, v) in [("amounts", &self.amounts), ("confirm_delays", &self.confirm_delays), ("locktimes", &self.locktimes)] {
            if v.len() != n {
                return bad(format!("{name} has {} entries, expected {n}", v.len()));
            }
        }
        let finite = self.amounts.iter().chain(&self.confirm_delays).chain(&self.locktimes).all(|x| x.is_finite())
            && [self.d, self.delta, self.rho, self.t_eps].iter().all(|x| x.is_finite());
        if !finite {
            return bad("all values must be finite".into());
        }
        if let Some(i) = self.amounts.iter().position(|&a| a <= 0.0) {
            return bad(format!("a{i} <= 0"));
        }
        if let Some(i) = self.confirm_delays.iter().position(|&t| t <= 0.0) {
            return bad(format!("tau{i} <= 0"));
        }
        if self.d <= 0.0 {
            return bad("D <= 0".into());
        }
        if self.delta <= 0.0 {
            return bad("Delta <= 0".into());
        }
        if self.rho < 0.0 {
            return bad("rho < 0".into());
        }
        if self.t_eps < 0.0 {
            return bad("t_eps < 0".into());
        }
        for i in 1..n {
            if self.locktimes[i] >= self.locktimes[i - 1] {
                return bad(format!("T{i} >= T{}", i - 1));
            }
        }
        let top = self.d + (n - 1) as f64 * self.delta;
        if top >= self.locktimes[n - 1] {
            return bad(format!("D + {}*Delta >= T{}", n - 1, n - 1));
        }
        Ok(())
    }

    fn premium(&self, i: usize) -> Coins {
        self.rho * self.amounts[i] * self.locktimes[i]
    }
}

/// One lock of a cyclic plan, as exported.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LockAction {
    pub step: usize,
    pub start: Hours,
    pub label: String,
    pub party: String,
    pub receiver: String,
    pub chain: String,
    pub kind: LockKind,
    pub amount: Coins,
    pub locktime: Hours,
    /// Hashes whose preimage unlocks the lock for its receiver (principal)
    /// or owner (premium).
    pub hashlock: Vec<String>,
    pub early_refund: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CyclicPlan {
    pub spec: CyclicSpec,
    /// Intermediary fee, always zero.
    pub fee: Coins,
    pub plan: LockPlan,
    pub actions: Vec<LockAction>,
}

fn party(i: usize) -> PartyId {
    PartyId(i)
}

fn actions(plan: &LockPlan) -> Vec<LockAction> {
    let label = |h: usize| plan.hashes[h].label.clone();
    plan.locks()
        .map(|(k, l)| LockAction {
            step: k,
            start: plan.steps[k].nominal_start,
            label: l.label.clone(),
            party: plan.parties[l.owner.0].clone(),
            receiver: plan.parties[l.receiver.0].clone(),
            chain: plan.chains[l.chain.0].name.clone(),
            kind: l.kind,
            amount: l.amount,
            locktime: l.locktime,
            hashlock: l.claim_hash.iter().chain(&l.release_hashes).map(|&h| label(h)).collect(),
            early_refund: l.early_refund.map(label),
        })
        .collect()
}

pub fn generate(spec: &CyclicSpec) -> Result<CyclicPlan, CyclicError> {
    spec.validate()?;
    let n = spec.n;
    let last = n - 1;
    let payment = 0;
    let cancel = |i: usize| 1 + i;
    let pred = |i: usize| (i + n - 1) % n;
    let mut hashes = vec![HashSpec { label: "Hbar".into(), role: HashRole::Payment, owner: party(0) }];
    hashes.extend((0..n).map(|i| HashSpec { label: format!("H{i}"), role: HashRole::Cancel(party(i)), owner: party(i) }));

    let principal = |i: usize| LockSpec {
        label: format!("principal_P{i}"),
        owner: party(i),
        receiver: party((i + 1) % n),
        chain: ChainId(i),
        amount: spec.amounts[i],
        kind: LockKind::Principal,
        locktime: spec.locktimes[i],
        claim_hash: Some(payment),
        release_hashes: Vec::new(),
        early_refund: Some(cancel(pred(i))),
    };
    let premium = |i: usize, rungs: usize| {
        let to = (i + 1) % n;
        LockSpec {
            label: format!("premium_P{i}"),
            owner: party(i),
            receiver: party(to),
            chain: ChainId(i),
            amount: spec.premium(to),
            kind: LockKind::Premium,
            locktime: spec.d + rungs as f64 * spec.delta,
            claim_hash: None,
            release_hashes: vec![payment, cancel(i)],
            early_refund: None,
        }
    };

    let mut steps = vec![LockStep { party: party(last), phase: Phase::PremiumLock, nominal_start: 0.0, locks: vec![premium(last, n - 1)] }];
    let mut t = 0.0;
    let mut prev_chain = last;
    for i in 0..n {
        t += spec.confirm_delays[prev_chain];
        let mut locks = vec![principal(i)];
        if i < last {
            locks.push(premium(i, n - 2 - i));
        }
        steps.push(LockStep { party: party(i), phase: Phase::PrincipalLock, nominal_start: t, locks });
        prev_chain = i;
    }

    let plan = LockPlan {
        parties: (0..n).map(|i| format!("P{i}")).collect(),
        chains: (0..n).map(|i| ChainSpec { name: format!("chain-{i}"), confirm_delay: spec.confirm_delays[i] }).collect(),
        hashes,
        steps,
        observe_delay: spec.t_eps,
        grace: spec.confirm_delays.iter().cloned().fold(0.0, f64::max) / 2.0,
    };
    plan.validate().map_err(|e| CyclicError::Invalid(e.to_string()))?;
    Ok(CyclicPlan { spec: spec.clone(), fee: 0.0, actions: actions(&plan), plan })
}

/// Structural checks; returns every violation found.
pub fn validate_plan(cp: &CyclicPlan) -> Vec<String> {
    let plan = &cp.plan;
    let mut v = Vec::new();
    let payments: Vec<usize> =
        plan.hashes.iter().enumerate().filter(|(_, h)| h.role == HashRole::Payment).map(|(i, _)| i).collect();
    if payments.len() != 1 {
        v.push(format!("expected one payment hash, found {}", payments.len()));
    }
    let payment = payments.first().copied();
    let is_cancel = |h: usize| matches!(plan.hashes[h].role, HashRole::Cancel(_));

    let mut principals: Vec<&LockSpec> =
        plan.locks().map(|(_, l)| l).filter(|l| l.kind == LockKind::Principal).collect();
    principals.sort_by_key(|l| l.owner);
    for w in principals.windows(2) {
        if w[1].locktime >= w[0].locktime {
            v.push(format!("principal locktime of {} ({}) >= {} ({})", w[1].owner, w[1].locktime, w[0].owner, w[0].locktime));
        }
    }

    let premiums: Vec<&LockSpec> = plan.locks().map(|(_, l)| l).filter(|l| l.kind == LockKind::Premium).collect();
    for w in premiums.windows(2) {
        let step = w[0].locktime - w[1].locktime;
        if (step - cp.spec.delta).abs() > LADDER_TOL {
            v.push(format!("premium ladder {} -> {} steps by {step}, expected {}", w[0].label, w[1].label, cp.spec.delta));
        }
    }

    for l in &principals {
        match l.early_refund {
            Some(h) if is_cancel(h) => {}
            Some(_) => v.push(format!("{} refunds early with a non-cancellation hash", l.label)),
            None => v.push(format!("{} has no early refund", l.label)),
        }
        if l.claim_hash != payment || payment.is_none() {
            v.push(format!("{} is not claimable with the payment preimage alone", l.label));
        }
    }
    let mut refunds: Vec<usize> = principals.iter().filter_map(|l| l.early_refund).collect();
    refunds.sort_unstable();
    if refunds.windows(2).any(|w| w[0] == w[1]) {
        v.push("two principals refund early with the same cancellation hash".into());
    }

    for l in &premiums {
        if payment.is_none_or(|p| !l.release_hashes.contains(&p)) {
            v.push(format!("{} is not releasable with the payment preimage", l.label));
        }
    }
    for (h, spec) in plan.hashes.iter().enumerate().filter(|(h, _)| is_cancel(*h)) {
        let mut users: Vec<PartyId> = premiums.iter().filter(|l| l.release_hashes.contains(&h)).map(|l| l.owner).collect();
        users.dedup();
        if users.len() > 1 {
            let names: Vec<String> = users.iter().map(|p| p.to_string()).collect();
            v.push(format!("cancellation hash {} shared by {}", spec.label, names.join(", ")));
        }
        if let Some(other) = users.iter().find(|&&p| p != spec.owner) {
            v.push(format!("{} releases with cancellation hash {} owned by {}", other, spec.label, spec.owner));
        }
    }
    v
}

/// Writes one JSON record per lock action.
pub fn write_plan_jsonl<W: Write>(cp: &CyclicPlan, mut out: W) -> io::Result<()> {
    for a in &cp.actions {
        serde_json::to_writer(&mut out, a)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn total_delay(plan: &LockPlan, strategies: &[Strategy]) -> Hours {
    strategies
        .iter()
        .enumerate()
        .map(|(p, s)| plan.phases(party(p)).iter().map(|&ph| s.delay(ph)).sum::<Hours>())
        .sum()
}

/// Executes the plan with one strategy per party. Coins of every chain are
/// valued at par.
pub fn run_cyclic(cp: &CyclicPlan, strategies: &[Strategy], seed: u64) -> Result<TraceVerdict, CyclicError> {
    let cfg = RunConfig { seed, reveal: RevealPolicy::Broadcast };
    let trace = run_plan(&cp.plan, strategies, None, &cfg)?;
    let compliant: Vec<bool> = strategies.iter().map(Strategy::is_compliant).collect();
    let rates = vec![1.0; cp.plan.chains.len()];
    Ok(evaluate(&cp.plan, trace, &compliant, &rates, total_delay(&cp.plan, strategies), SafetyRule::Compensation))
}

/// All-compliant profile plus every single-deviator profile: grief, cancel
/// and each grid delay at each of the deviator's phases.
pub fn single_deviator_grid(cp: &CyclicPlan) -> Vec<Vec<Strategy>> {
    let n = cp.spec.n;
    let mut out = vec![vec![Strategy::Compliant; n]];
    for p in 0..n {
        for phase in cp.plan.phases(party(p)) {
            let mut moves = vec![Strategy::Grief { from: phase }, Strategy::Cancel { phase }];
            moves.extend(GRID_DELAYS.iter().map(|&hours| Strategy::Delay { phase, hours }));
            for m in moves {
                let mut profile = vec![Strategy::Compliant; n];
                profile[p] = m;
                out.push(profile);
            }
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct CyclicRow {
    pub profile: Vec<String>,
    pub outcome: Outcome,
    pub safety: bool,
    pub liveness: bool,
    /// Success traces reveal the payment preimage and nothing else.
    pub single_secret: bool,
    pub net_values: Vec<f64>,
    pub witnesses: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CyclicReport {
    pub n: usize,
    pub rows: Vec<CyclicRow>,
}

impl CyclicReport {
    pub fn all_hold(&self) -> bool {
        self.rows.iter().all(|r| r.safety && r.liveness && r.single_secret)
            && self.rows.first().is_some_and(|r| r.outcome == Outcome::Swapped)
    }
}

pub fn check_cyclic(cp: &CyclicPlan, seed: u64) -> Result<CyclicReport, CyclicError> {
    let rows = single_deviator_grid(cp)
        .into_par_iter()
        .map(|profile| {
            let v = run_cyclic(cp, &profile, seed)?;
            let single_secret = v.outcome != Outcome::Swapped
                || (v.trace.revealed.len() == 1 && v.trace.revealed[0].role == HashRole::Payment);
            let mut witnesses = v.witnesses.clone();
            witnesses.extend(v.parties.iter().flat_map(|p| p.witnesses.iter().cloned()));
            Ok(CyclicRow {
                profile: profile.iter().map(Strategy::label).collect(),
                outcome: v.outcome,
                safety: v.safety,
                liveness: v.liveness,
                single_secret,
                net_values: v.parties.iter().map(|p| p.net_value).collect(),
                witnesses,
            })
        })
        .collect::<Result<Vec<_>, CyclicError>>()?;
    Ok(CyclicReport { n: cp.spec.n, rows })
}
