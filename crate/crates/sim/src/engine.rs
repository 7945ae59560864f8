//! Party automata that execute a lock plan on a simulated world.
//!
//! Compliant parties act at the earliest permitted time: they lock once the
//! previous step is confirmed, claim as soon as the payment preimage is
//! visible, cascade cancellations, and sweep every timelocked output they
//! are entitled to at expiry.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use swapgame_core::pricemodel::PricePath;

use crate::ledger::{
    ChainId, Coins, Digest, Hours, LedgerError, LedgerEvent, OutPoint, PartyId, RevealPolicy, Secret, Transaction,
    TxId, World,
};
use crate::plan::{BranchRole, HashRole, LockKind, LockPlan, Phase, PlanError};

const MAX_ITERATIONS: usize = 100_000;
const MAX_ROUNDS: usize = 64;

/// Price condition of a threshold decision.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum PriceRule {
    AtLeast(f64),
    /// Half-open band (lower, upper].
    Within { lower: f64, upper: f64 },
}

impl PriceRule {
    pub fn accepts(&self, price: f64) -> bool {
        match *self {
            PriceRule::AtLeast(x) => price >= x,
            PriceRule::Within { lower, upper } => price > lower && price <= upper,
        }
    }
}

/// What a threshold party does when the price rule fails.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Reject {
    Stop,
    Cancel,
    Grief,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ThresholdRule {
    pub phase: Phase,
    pub delay: Hours,
    pub accept: PriceRule,
    pub reject: Reject,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Strategy {
    Compliant,
    /// No protocol actions from this phase on; timelock sweeps continue.
    Grief { from: Phase },
    Delay { phase: Phase, hours: Hours },
    /// Skip this phase's action and start cancelling.
    Cancel { phase: Phase },
    Threshold(Vec<ThresholdRule>),
}

impl Strategy {
    pub fn is_compliant(&self) -> bool {
        matches!(self, Strategy::Compliant)
    }

    pub fn delay(&self, phase: Phase) -> Hours {
        match self {
            Strategy::Delay { phase: p, hours } if *p == phase => *hours,
            Strategy::Threshold(rules) => rules.iter().find(|r| r.phase == phase).map_or(0.0, |r| r.delay),
            _ => 0.0,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Strategy::Compliant => "compliant".into(),
            Strategy::Grief { from } => format!("grief@{}", from.name()),
            Strategy::Delay { phase, hours } => format!("delay@{}+{hours}h", phase.name()),
            Strategy::Cancel { phase } => format!("cancel@{}", phase.name()),
            Strategy::Threshold(_) => "threshold".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Decision {
    Proceed,
    Stop,
    Cancel,
    Grief,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("ledger failure: {0}")]
    Ledger(#[from] LedgerError),
    #[error("expected {expected} strategies, got {got}")]
    StrategyCount { expected: usize, got: usize },
    #[error("threshold strategy needs a price path")]
    MissingPricePath,
    #[error("simulation did not settle by t = {0}")]
    Stalled(Hours),
}

#[derive(Clone, Copy, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub reveal: RevealPolicy,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { seed: 0, reveal: RevealPolicy::Broadcast }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpentBy {
    pub role: BranchRole,
    pub claimant: PartyId,
    pub broadcast: Hours,
    pub confirmed: Hours,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LockOutcome {
    pub step: usize,
    pub label: String,
    pub owner: PartyId,
    pub receiver: PartyId,
    pub kind: LockKind,
    pub chain: ChainId,
    pub amount: Coins,
    pub locktime: Hours,
    pub broadcast: Option<Hours>,
    pub confirmed: Option<Hours>,
    pub spent: Option<SpentBy>,
}

impl LockOutcome {
    pub fn expiry(&self) -> Option<Hours> {
        self.broadcast.map(|b| b + self.locktime)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ActionRecord {
    pub time: Hours,
    pub party: PartyId,
    pub what: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RevealRecord {
    pub hash: usize,
    pub role: HashRole,
    pub time: Hours,
}

#[derive(Clone, Debug, Serialize)]
pub struct Trace {
    pub locks: Vec<LockOutcome>,
    pub events: Vec<LedgerEvent>,
    pub actions: Vec<ActionRecord>,
    /// First broadcast of each preimage.
    pub revealed: Vec<RevealRecord>,
    /// `[party][chain]`.
    pub endowments: Vec<Vec<Coins>>,
    pub balances: Vec<Vec<Coins>>,
    pub end_time: Hours,
    pub conserved: bool,
    pub final_price: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Key {
    Step(usize),
    Claim,
    WatchInit,
    Watch(usize),
    Refund(usize),
    Release(usize),
    Sweep(usize),
}

struct LockRt {
    step: usize,
    op: Option<OutPoint>,
    roles: Vec<BranchRole>,
    broadcast: Option<Hours>,
}

#[derive(Default)]
struct PartyRt {
    griefing: bool,
    cancel_at: Option<Hours>,
    payment_revealed: bool,
    done: HashSet<Key>,
    spending: HashSet<usize>,
}

struct Sim<'a> {
    plan: &'a LockPlan,
    strategies: &'a [Strategy],
    world: World,
    secrets: Vec<Secret>,
    digests: Vec<Digest>,
    specs: Vec<&'a crate::plan::LockSpec>,
    locks: Vec<LockRt>,
    parties: Vec<PartyRt>,
    price: Option<&'a mut PricePath>,
    actions: Vec<ActionRecord>,
    initiator: PartyId,
    payment: usize,
}

/// Runs `plan` with one strategy per party until every lock is settled.
pub fn run_plan(
    plan: &LockPlan,
    strategies: &[Strategy],
    price: Option<&mut PricePath>,
    cfg: &RunConfig,
) -> Result<Trace, EngineError> {
    plan.validate()?;
    if strategies.len() != plan.parties.len() {
        return Err(EngineError::StrategyCount { expected: plan.parties.len(), got: strategies.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let secrets: Vec<Secret> = plan.hashes.iter().map(|_| Secret::random(&mut rng)).collect();
    let digests = secrets.iter().map(Secret::digest).collect();
    let mut world = World::new(plan.observe_delay, cfg.reveal);
    let endowments = plan.endowments();
    for c in &plan.chains {
        world.add_chain(c.name.clone(), c.confirm_delay);
    }
    for (p, row) in endowments.iter().enumerate() {
        for (c, &amount) in row.iter().enumerate() {
            if amount > 0.0 {
                world.chain_mut(ChainId(c)).endow(PartyId(p), amount);
            }
        }
    }
    let specs: Vec<_> = plan.locks().map(|(_, l)| l).collect();
    let locks = plan.locks().map(|(k, _)| LockRt { step: k, op: None, roles: Vec::new(), broadcast: None }).collect();
    let mut sim = Sim {
        plan,
        strategies,
        world,
        secrets,
        digests,
        specs,
        locks,
        parties: (0..plan.parties.len()).map(|_| PartyRt::default()).collect(),
        price,
        actions: Vec::new(),
        initiator: plan.initiator(),
        payment: plan.payment_hash().ok_or(PlanError::PaymentHash)?,
    };
    let end_time = sim.run()?;
    Ok(sim.finish(endowments, end_time))
}

impl<'a> Sim<'a> {
    fn run(&mut self) -> Result<Hours, EngineError> {
        let mut now = 0.0;
        let mut last_event = 0.0;
        for _ in 0..MAX_ITERATIONS {
            let mut settled = false;
            for _ in 0..MAX_ROUNDS {
                let mut acted = false;
                for p in 0..self.parties.len() {
                    let due: Vec<Key> = self
                        .intents(PartyId(p))
                        .into_iter()
                        .filter(|(t, _)| *t <= now)
                        .map(|(_, k)| k)
                        .collect();
                    for key in due {
                        self.execute(PartyId(p), key, now)?;
                        acted = true;
                    }
                }
                if !acted {
                    settled = true;
                    break;
                }
            }
            if !settled {
                return Err(EngineError::Stalled(now));
            }
            let wake = (0..self.parties.len())
                .flat_map(|p| self.intents(PartyId(p)))
                .map(|(t, _)| t)
                .filter(|&t| t > now)
                .reduce(f64::min);
            let next = match (wake, self.world.next_confirmation()) {
                (Some(a), Some(b)) => a.min(b),
                (a, b) => match a.or(b) {
                    Some(t) => t,
                    None => return Ok(last_event),
                },
            };
            self.world.advance(next)?;
            now = next;
            last_event = now;
        }
        Err(EngineError::Stalled(now))
    }

    fn confirmed(&self, i: usize) -> Option<Hours> {
        let op = self.locks[i].op.as_ref()?;
        self.world.chain(self.specs[i].chain).output(op).map(|r| r.confirm_time)
    }

    fn spent(&self, i: usize) -> Option<&crate::ledger::SpendRecord> {
        let op = self.locks[i].op.as_ref()?;
        self.world.chain(self.specs[i].chain).spend_of(op)
    }

    fn unspent(&self, i: usize) -> bool {
        self.confirmed(i).is_some() && self.spent(i).is_none()
    }

    fn step_confirmed(&self, k: usize) -> Option<Hours> {
        let mut latest: Option<Hours> = None;
        for (i, l) in self.locks.iter().enumerate() {
            if l.step == k {
                let c = self.confirmed(i)?;
                latest = Some(latest.map_or(c, |t: Hours| t.max(c)));
            }
        }
        latest
    }

    fn step_broadcast(&self, k: usize) -> bool {
        self.locks.iter().any(|l| l.step == k && l.broadcast.is_some())
    }

    fn visible(&self, hash: usize) -> Option<(Hours, Secret)> {
        self.world.visible_at(&self.digests[hash])
    }

    /// Earliest time `p` sees someone else's cancellation preimage.
    fn cancel_seen(&self, p: PartyId) -> Option<Hours> {
        self.plan
            .hashes
            .iter()
            .enumerate()
            .filter(|(_, h)| matches!(h.role, HashRole::Cancel(q) if q != p))
            .filter_map(|(i, _)| self.visible(i).map(|v| v.0))
            .reduce(f64::min)
    }

    fn own_principal(&self, p: PartyId) -> Option<usize> {
        (0..self.specs.len()).find(|&i| self.specs[i].owner == p && self.specs[i].kind == LockKind::Principal)
    }

    /// Time from which `p`'s principal `j` is certain to come back: its refund
    /// confirmed, or its refund is the pending spend that confirms first.
    fn refund_settled(&self, p: PartyId, j: usize) -> Option<Hours> {
        if let Some(s) = self.spent(j) {
            return (s.claimant == p).then_some(s.confirm_time);
        }
        let op = self.locks[j].op.as_ref()?;
        let (tx, at) = self.world.chain(self.specs[j].chain).first_pending_spend(op)?;
        (tx.spends[0].claimant == p).then_some(at)
    }

    fn intents(&self, p: PartyId) -> Vec<(Hours, Key)> {
        let st = &self.parties[p.0];
        let strat = &self.strategies[p.0];
        let mut out = Vec::new();
        let pending = |i: usize| st.spending.contains(&i);
        for (i, spec) in self.specs.iter().enumerate() {
            if spec.timeout_claimant() == p && !st.done.contains(&Key::Sweep(i)) && !pending(i) && self.unspent(i) {
                let expiry = self.locks[i].broadcast.unwrap_or(0.0) + spec.locktime;
                out.push((expiry.max(self.confirmed(i).unwrap_or(expiry)), Key::Sweep(i)));
            }
        }
        if st.griefing {
            return out;
        }
        let steps = &self.plan.steps;
        for (k, step) in steps.iter().enumerate() {
            if step.party != p || st.done.contains(&Key::Step(k)) {
                continue;
            }
            let base = if k == 0 { Some(step.nominal_start) } else { self.step_confirmed(k - 1) };
            if let Some(b) = base {
                out.push((b + strat.delay(step.phase), Key::Step(k)));
            }
        }
        if !st.done.contains(&Key::Claim) {
            let base = if p == self.initiator {
                self.step_confirmed(steps.len() - 1)
            } else {
                self.visible(self.payment).map(|v| v.0)
            };
            if let Some(b) = base {
                out.push((b + strat.delay(Phase::Claim), Key::Claim));
            }
        }
        let mine: Vec<usize> = (0..steps.len()).filter(|&k| steps[k].party == p).collect();
        if p == self.initiator && self.plan.cancel_hash(p).is_some() && !st.done.contains(&Key::WatchInit) {
            if let Some(&own) = mine.last() {
                if let Some(c) = self.step_confirmed(own) {
                    let rest: Hours = (own + 1..steps.len()).map(|k| self.plan.step_delay(k)).sum();
                    out.push((c + rest, Key::WatchInit));
                }
            }
        }
        for pair in mine.windows(2) {
            for k in pair[0] + 1..pair[1] {
                if st.done.contains(&Key::Watch(k)) {
                    continue;
                }
                if let Some(c) = self.step_confirmed(k - 1) {
                    out.push((c + self.plan.step_delay(k) + self.plan.grace, Key::Watch(k)));
                }
            }
        }
        let trigger = match (st.cancel_at, self.cancel_seen(p)) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        for (i, spec) in self.specs.iter().enumerate() {
            if spec.owner != p || pending(i) || !self.unspent(i) {
                continue;
            }
            let confirmed = self.confirmed(i).unwrap_or(0.0);
            match spec.kind {
                LockKind::Principal => {
                    if let Some(h) = spec.early_refund {
                        if !st.done.contains(&Key::Refund(i)) {
                            if let Some((v, _)) = self.visible(h) {
                                out.push((v.max(confirmed), Key::Refund(i)));
                            }
                        }
                    }
                }
                LockKind::Premium => {
                    if st.done.contains(&Key::Release(i)) || (p == self.initiator && st.payment_revealed) {
                        continue;
                    }
                    let Some(t) = trigger else { continue };
                    let gate = if p == self.initiator {
                        Some(0.0)
                    } else {
                        match self.own_principal(p) {
                            None => Some(0.0),
                            Some(j) if self.locks[j].broadcast.is_none() => Some(0.0),
                            Some(j) => self.refund_settled(p, j),
                        }
                    };
                    if let Some(g) = gate {
                        out.push((t.max(g).max(confirmed), Key::Release(i)));
                    }
                }
            }
        }
        out
    }

    fn decide(&mut self, p: PartyId, phase: Phase, now: Hours) -> Result<Decision, EngineError> {
        Ok(match &self.strategies[p.0] {
            Strategy::Compliant | Strategy::Delay { .. } => Decision::Proceed,
            Strategy::Grief { from } if phase >= *from => Decision::Grief,
            Strategy::Grief { .. } => Decision::Proceed,
            Strategy::Cancel { phase: c } if *c == phase => Decision::Cancel,
            Strategy::Cancel { .. } => Decision::Proceed,
            Strategy::Threshold(rules) => match rules.iter().find(|r| r.phase == phase) {
                None => Decision::Proceed,
                Some(rule) => {
                    let rule = *rule;
                    let price = self.price.as_deref_mut().ok_or(EngineError::MissingPricePath)?.price_at(now);
                    if rule.accept.accepts(price) {
                        Decision::Proceed
                    } else {
                        match rule.reject {
                            Reject::Stop => Decision::Stop,
                            Reject::Cancel => Decision::Cancel,
                            Reject::Grief => Decision::Grief,
                        }
                    }
                }
            },
        })
    }

    fn note(&mut self, p: PartyId, now: Hours, what: String) {
        self.actions.push(ActionRecord { time: now, party: p, what });
    }

    /// Returns true if this decision stops the phase action.
    fn apply_decision(&mut self, p: PartyId, phase: Phase, d: Decision, now: Hours) -> bool {
        match d {
            Decision::Proceed => return false,
            Decision::Grief => self.parties[p.0].griefing = true,
            Decision::Cancel => {
                let st = &mut self.parties[p.0];
                st.cancel_at.get_or_insert(now);
            }
            Decision::Stop => {}
        }
        self.note(p, now, format!("{:?} at {}", d, phase.name()).to_lowercase());
        true
    }

    fn spend(&mut self, p: PartyId, i: usize, verb: &str, preimages: Vec<Secret>, now: Hours) -> Result<(), EngineError> {
        let spec = self.specs[i];
        let op = self.locks[i].op.clone().expect("spend of an unbroadcast lock");
        let tx = Transaction::sweep(format!("{verb}:{}", spec.label), op, p, spec.amount, preimages);
        let id = tx.id.clone();
        match self.world.broadcast(spec.chain, tx, now) {
            Ok(_) => {
                self.parties[p.0].spending.insert(i);
                self.note(p, now, format!("broadcast {id}"));
                Ok(())
            }
            Err(e @ LedgerError::TimeRegression { .. }) => Err(e.into()),
            Err(e) => {
                self.note(p, now, format!("rejected {id}: {e}"));
                Ok(())
            }
        }
    }

    fn execute(&mut self, p: PartyId, key: Key, now: Hours) -> Result<(), EngineError> {
        self.parties[p.0].done.insert(key);
        match key {
            Key::Sweep(i) => {
                if self.unspent(i) {
                    self.spend(p, i, "sweep", Vec::new(), now)?;
                }
            }
            Key::Step(k) => {
                let phase = self.plan.steps[k].phase;
                let d = self.decide(p, phase, now)?;
                if self.apply_decision(p, phase, d, now) {
                    return Ok(());
                }
                if self.parties[p.0].cancel_at.is_some() || self.cancel_seen(p).is_some_and(|t| t <= now) {
                    self.note(p, now, format!("skip step {k}: cancellation seen"));
                    return Ok(());
                }
                for i in 0..self.specs.len() {
                    if self.locks[i].step != k {
                        continue;
                    }
                    let spec = self.specs[i];
                    let (branches, roles) = spec.branches(&self.digests, now);
                    let tx = Transaction::lock(format!("lock:{}", spec.label), spec.owner, spec.amount, branches);
                    let id = tx.id.clone();
                    self.world.broadcast(spec.chain, tx, now)?;
                    self.locks[i].op = Some(OutPoint { tx: id.clone(), index: 0 });
                    self.locks[i].roles = roles;
                    self.locks[i].broadcast = Some(now);
                    self.note(p, now, format!("broadcast {id}"));
                }
            }
            Key::Claim => {
                let d = self.decide(p, Phase::Claim, now)?;
                if self.apply_decision(p, Phase::Claim, d, now) {
                    return Ok(());
                }
                let secret = if p == self.initiator {
                    if self.parties[p.0].cancel_at.is_some() || self.cancel_seen(p).is_some_and(|t| t <= now) {
                        self.note(p, now, "skip claim: cancellation seen".into());
                        return Ok(());
                    }
                    self.parties[p.0].payment_revealed = true;
                    self.secrets[self.payment]
                } else {
                    match self.visible(self.payment) {
                        Some((_, s)) => s,
                        None => return Ok(()),
                    }
                };
                for i in 0..self.specs.len() {
                    let spec = self.specs[i];
                    let incoming = spec.kind == LockKind::Principal && spec.receiver == p;
                    let own_premium = spec.kind == LockKind::Premium && spec.owner == p;
                    if (incoming || own_premium) && self.unspent(i) && !self.parties[p.0].spending.contains(&i) {
                        let verb = if incoming { "claim" } else { "release" };
                        self.spend(p, i, verb, vec![secret], now)?;
                    }
                }
            }
            Key::WatchInit => {
                let last = self.plan.steps.len() - 1;
                if self.step_confirmed(last).is_none() && !self.parties[p.0].payment_revealed {
                    self.parties[p.0].cancel_at.get_or_insert(now);
                    self.note(p, now, "watchdog: final lock missing".into());
                }
            }
            Key::Watch(k) => {
                let later_locked = self
                    .plan
                    .steps
                    .iter()
                    .enumerate()
                    .any(|(j, s)| j > k && s.party == p && self.step_broadcast(j));
                if self.step_confirmed(k).is_none() && !later_locked {
                    self.parties[p.0].cancel_at.get_or_insert(now);
                    self.note(p, now, format!("watchdog: step {k} missing"));
                }
            }
            Key::Refund(i) => {
                if let Some((_, s)) = self.specs[i].early_refund.and_then(|h| self.visible(h)) {
                    if self.unspent(i) {
                        self.spend(p, i, "refund", vec![s], now)?;
                    }
                }
            }
            Key::Release(i) => {
                if let Some(h) = self.plan.cancel_hash(p) {
                    if self.unspent(i) && self.specs[i].release_hashes.contains(&h) {
                        let s = self.secrets[h];
                        self.spend(p, i, "release", vec![s], now)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn finish(self, endowments: Vec<Vec<Coins>>, end_time: Hours) -> Trace {
        let locks = (0..self.specs.len())
            .map(|i| {
                let spec = self.specs[i];
                let spent = self.spent(i).map(|s| SpentBy {
                    role: self.locks[i].roles[s.branch],
                    claimant: s.claimant,
                    broadcast: s.broadcast_time,
                    confirmed: s.confirm_time,
                });
                LockOutcome {
                    step: self.locks[i].step,
                    label: spec.label.clone(),
                    owner: spec.owner,
                    receiver: spec.receiver,
                    kind: spec.kind,
                    chain: spec.chain,
                    amount: spec.amount,
                    locktime: spec.locktime,
                    broadcast: self.locks[i].broadcast,
                    confirmed: self.confirmed(i),
                    spent,
                }
            })
            .collect();
        let mut revealed: Vec<RevealRecord> = Vec::new();
        for r in self.world.revelations() {
            if let Some(h) = self.digests.iter().position(|d| *d == r.digest) {
                if !revealed.iter().any(|x| x.hash == h) {
                    revealed.push(RevealRecord { hash: h, role: self.plan.hashes[h].role, time: r.broadcast_time });
                }
            }
        }
        let balances = (0..self.plan.parties.len())
            .map(|p| self.world.balance(PartyId(p)).into_iter().map(|(_, b)| b).collect())
            .collect();
        let final_price = self.price.map(|path| path.price_at(end_time));
        Trace {
            locks,
            events: self.world.events().to_vec(),
            actions: self.actions,
            revealed,
            endowments,
            balances,
            end_time,
            conserved: self.world.is_conserved(),
            final_price,
        }
    }
}

impl Trace {
    pub fn lock(&self, label: &str) -> Option<&LockOutcome> {
        self.locks.iter().find(|l| l.label == label)
    }

    pub fn tx_confirmed(&self, id: &str) -> Option<Hours> {
        self.events
            .iter()
            .find(|e| e.tx == TxId(id.to_owned()) && e.kind == crate::ledger::EventKind::Confirmed)
            .map(|e| e.time)
    }

    pub fn tx_broadcast(&self, id: &str) -> Option<Hours> {
        self.events
            .iter()
            .find(|e| e.tx == TxId(id.to_owned()) && e.kind == crate::ledger::EventKind::Broadcast)
            .map(|e| e.time)
    }
}
