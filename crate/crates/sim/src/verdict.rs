//! Outcome classification and property checks over a finished trace.

use serde::Serialize;

use crate::engine::{LockOutcome, Trace};
use crate::ledger::{Hours, PartyId};
use crate::plan::{BranchRole, LockKind, LockPlan};

const TIME_TOL: f64 = 1e-9;
const VALUE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Outcome {
    /// Every principal was locked and claimed by its receiver.
    Swapped,
    /// No principal moved; every locked principal came back early.
    Cancelled,
    /// Anything else: some principal sat until its timelock or moved one way.
    Griefed,
}

/// Which safety conditions a compliant party must meet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SafetyRule {
    /// Compensation rules plus a non-negative net value for a party that did not swap.
    NetValue,
    /// Compensation rules only.
    Compensation,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PartyVerdict {
    pub party: PartyId,
    pub compliant: bool,
    /// Value change in the reference asset.
    pub net_value: f64,
    pub safe: bool,
    pub witnesses: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceVerdict {
    pub outcome: Outcome,
    pub parties: Vec<PartyVerdict>,
    /// Only defined when every party is compliant.
    pub correctness: Option<bool>,
    /// Safety of every compliant party.
    pub safety: bool,
    pub liveness: bool,
    pub liveness_bound: Hours,
    pub witnesses: Vec<String>,
    pub trace: Trace,
}

impl TraceVerdict {
    pub fn net_value(&self, p: PartyId) -> f64 {
        self.parties[p.0].net_value
    }

    pub fn party(&self, p: PartyId) -> &PartyVerdict {
        &self.parties[p.0]
    }
}

pub fn classify(trace: &Trace) -> Outcome {
    let principals: Vec<&LockOutcome> = trace.locks.iter().filter(|l| l.kind == LockKind::Principal).collect();
    let claimed = |l: &&LockOutcome| l.spent.as_ref().is_some_and(|s| s.role == BranchRole::Claim);
    if principals.iter().all(|l| l.broadcast.is_some() && claimed(l)) {
        return Outcome::Swapped;
    }
    let early = |l: &&LockOutcome| {
        l.broadcast.is_none() || l.spent.as_ref().is_some_and(|s| s.role == BranchRole::EarlyRefund)
    };
    if !principals.iter().any(claimed) && principals.iter().all(early) {
        Outcome::Cancelled
    } else {
        Outcome::Griefed
    }
}

/// Latest time a lock may still be unspent: expiry plus one confirmation.
pub fn lock_deadline(plan: &LockPlan, l: &LockOutcome) -> Option<Hours> {
    l.expiry().map(|e| e + plan.chains[l.chain.0].confirm_delay)
}

/// Global liveness horizon: the nominal last lock, every strategy delay,
/// the longest locktime and one confirmation.
pub fn liveness_bound(plan: &LockPlan, total_delay: Hours) -> Hours {
    let last = plan.steps.last().map_or(0.0, |s| s.nominal_start);
    last + total_delay + plan.max_locktime() + plan.max_confirm_delay()
}

/// Evaluates outcome, per-party safety and liveness.
///
/// `rates` converts each chain's coins into the reference asset.
pub fn evaluate(
    plan: &LockPlan,
    trace: Trace,
    compliant: &[bool],
    rates: &[f64],
    total_delay: Hours,
    rule: SafetyRule,
) -> TraceVerdict {
    let outcome = classify(&trace);
    let mut parties = Vec::with_capacity(plan.parties.len());
    for p in 0..plan.parties.len() {
        let party = PartyId(p);
        let net_value: f64 = trace.balances[p]
            .iter()
            .zip(&trace.endowments[p])
            .zip(rates)
            .map(|((b, e), r)| (b - e) * r)
            .sum();
        let witnesses = if compliant[p] { safety_witnesses(plan, &trace, party, net_value, rule) } else { Vec::new() };
        parties.push(PartyVerdict { party, compliant: compliant[p], net_value, safe: witnesses.is_empty(), witnesses });
    }
    let bound = liveness_bound(plan, total_delay);
    let mut witnesses = Vec::new();
    for l in &trace.locks {
        if l.broadcast.is_none() {
            continue;
        }
        let deadline = lock_deadline(plan, l).unwrap_or(f64::INFINITY).min(bound);
        match &l.spent {
            None => witnesses.push(format!("{} never released", l.label)),
            Some(s) if s.confirmed > deadline + TIME_TOL => {
                witnesses.push(format!("{} released at {} after bound {}", l.label, s.confirmed, deadline))
            }
            _ => {}
        }
    }
    if !trace.conserved {
        witnesses.push("ledger value not conserved".into());
    }
    let liveness = witnesses.is_empty();
    let correctness = compliant.iter().all(|&c| c).then(|| {
        matches!(outcome, Outcome::Swapped | Outcome::Cancelled) && parties.iter().all(|v| v.safe)
    });
    let safety = parties.iter().all(|v| v.safe);
    TraceVerdict { outcome, parties, correctness, safety, liveness, liveness_bound: bound, witnesses, trace }
}

fn safety_witnesses(plan: &LockPlan, trace: &Trace, p: PartyId, net_value: f64, rule: SafetyRule) -> Vec<String> {
    let mut w = Vec::new();
    let role_of = |l: &LockOutcome| l.spent.as_ref().map(|s| s.role);
    let incoming_claimed = trace
        .locks
        .iter()
        .filter(|l| l.kind == LockKind::Principal && l.receiver == p)
        .any(|l| l.spent.as_ref().is_some_and(|s| s.role == BranchRole::Claim && s.claimant == p));
    for out in trace.locks.iter().filter(|l| l.kind == LockKind::Principal && l.owner == p) {
        match role_of(out) {
            Some(BranchRole::Claim) if !incoming_claimed => {
                w.push(format!("{} claimed by counterparty but {p} received nothing", out.label));
            }
            Some(BranchRole::Timeout) if !incoming_claimed => {
                let comp = trace.locks.iter().find(|l| {
                    l.kind == LockKind::Premium
                        && l.receiver == p
                        && l.spent.as_ref().is_some_and(|s| s.role == BranchRole::Timeout && s.claimant == p)
                });
                match comp {
                    None => w.push(format!(
                        "{} locked from {} until timelock {} without compensation",
                        out.label,
                        out.broadcast.unwrap_or(0.0),
                        out.expiry().unwrap_or(0.0)
                    )),
                    Some(c) => {
                        let got = c.spent.as_ref().map_or(f64::INFINITY, |s| s.confirmed);
                        let due = lock_deadline(plan, c).unwrap_or(0.0);
                        if got > due + TIME_TOL {
                            w.push(format!("compensation {} received at {got}, due by {due}", c.label));
                        }
                    }
                }
            }
            _ => {}
        }
    }
    if rule == SafetyRule::NetValue && !incoming_claimed && net_value < -VALUE_TOL {
        w.push(format!("{p} ends without the swap and net value {net_value:.6}"));
    }
    w
}
