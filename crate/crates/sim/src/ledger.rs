//! Multi-chain ledger with hashlock/timelock outputs, fixed confirmation
//! delays and per-party balances.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};

use rand::Rng;
use serde::{Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub type Hours = f64;
pub type Coins = f64;

const AMOUNT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct PartyId(pub usize);

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ChainId(pub usize);

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct TxId(pub String);

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TxId {
    fn from(s: &str) -> Self {
        TxId(s.to_owned())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 image of a secret.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &hex(&self.0)[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex(&self.0))
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex(&self.0))
    }
}

/// A 32-byte preimage.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Secret(pub [u8; 32]);

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(..)")
    }
}

impl Secret {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; 32];
        rng.fill(&mut bytes);
        Secret(bytes)
    }

    pub fn digest(&self) -> Digest {
        Digest(Sha256::digest(self.0).into())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct OutPoint {
    pub tx: TxId,
    pub index: usize,
}

/// One way to spend a locked output. A branch with both a hash set and a
/// timelock needs both.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpendBranch {
    pub claimant: PartyId,
    /// Satisfied by the preimage of any listed digest.
    pub any_of: Vec<Digest>,
    /// Absolute hour; 0 means no timelock.
    pub not_before: Hours,
}

impl SpendBranch {
    pub fn hashlock(claimant: PartyId, any_of: Vec<Digest>) -> Self {
        Self { claimant, any_of, not_before: 0.0 }
    }

    pub fn timelock(claimant: PartyId, not_before: Hours) -> Self {
        Self { claimant, any_of: Vec::new(), not_before }
    }

    pub fn is_valid(&self) -> bool {
        (!self.any_of.is_empty() || self.not_before > 0.0) && self.not_before >= 0.0
    }

    fn check(&self, claimant: PartyId, shown: &[Digest], now: Hours) -> Result<(), LedgerError> {
        if self.claimant != claimant {
            return Err(LedgerError::WrongClaimant);
        }
        if !self.any_of.is_empty() && !shown.iter().any(|d| self.any_of.contains(d)) {
            return Err(LedgerError::MissingPreimage);
        }
        if now < self.not_before {
            return Err(LedgerError::Timelock { not_before: self.not_before });
        }
        Ok(())
    }
}

/// An output guarded by spend branches; the first confirmed spend wins.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LockedOutput {
    pub amount: Coins,
    pub branches: Vec<SpendBranch>,
    pub origin: TxId,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TxOutput {
    Lock { amount: Coins, branches: Vec<SpendBranch> },
    Pay { party: PartyId, amount: Coins },
}

impl TxOutput {
    pub fn amount(&self) -> Coins {
        match self {
            TxOutput::Lock { amount, .. } | TxOutput::Pay { amount, .. } => *amount,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spend {
    pub output: OutPoint,
    pub claimant: PartyId,
    pub preimages: Vec<Secret>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transaction {
    pub id: TxId,
    /// Coins drawn from free balances.
    pub funding: Vec<(PartyId, Coins)>,
    pub spends: Vec<Spend>,
    pub outputs: Vec<TxOutput>,
}

impl Transaction {
    /// Locks `amount` of `owner`'s balance under `branches`.
    pub fn lock(id: impl Into<String>, owner: PartyId, amount: Coins, branches: Vec<SpendBranch>) -> Self {
        Self {
            id: TxId(id.into()),
            funding: vec![(owner, amount)],
            spends: Vec::new(),
            outputs: vec![TxOutput::Lock { amount, branches }],
        }
    }

    /// Spends one output entirely to the claimant.
    pub fn sweep(
        id: impl Into<String>,
        output: OutPoint,
        claimant: PartyId,
        amount: Coins,
        preimages: Vec<Secret>,
    ) -> Self {
        Self {
            id: TxId(id.into()),
            funding: Vec::new(),
            spends: vec![Spend { output, claimant, preimages }],
            outputs: vec![TxOutput::Pay { party: claimant, amount }],
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum LedgerError {
    #[error("time regression: clock at {clock}, requested {requested}")]
    TimeRegression { clock: Hours, requested: Hours },
    #[error("unknown output {0:?}")]
    UnknownOutput(OutPoint),
    #[error("output {0:?} already spent")]
    AlreadySpent(OutPoint),
    #[error("no branch for this claimant")]
    WrongClaimant,
    #[error("required preimage missing")]
    MissingPreimage,
    #[error("timelock not reached (not before {not_before})")]
    Timelock { not_before: Hours },
    #[error("insufficient funds for {0}")]
    InsufficientFunds(PartyId),
    #[error("inputs {inputs} do not match outputs {outputs}")]
    ValueMismatch { inputs: Coins, outputs: Coins },
    #[error("invalid output: {0}")]
    InvalidOutput(&'static str),
    #[error("duplicate transaction id {0}")]
    DuplicateTx(TxId),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum EventKind {
    Broadcast,
    Confirmed,
    Dropped,
    Rejected,
}

/// One line of the trace log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LedgerEvent {
    pub time: Hours,
    pub chain: ChainId,
    pub tx: TxId,
    pub kind: EventKind,
    pub revealed: Vec<Digest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// A confirmed spend of a locked output.
#[derive(Clone, Debug, PartialEq)]
pub struct SpendRecord {
    pub tx: TxId,
    pub claimant: PartyId,
    pub branch: usize,
    pub amount: Coins,
    pub broadcast_time: Hours,
    pub confirm_time: Hours,
}

#[derive(Clone, Debug)]
struct PendingTx {
    tx: Transaction,
    broadcast_time: Hours,
    confirm_time: Hours,
    branches: Vec<usize>,
    revealed: Vec<Digest>,
}

#[derive(Clone, Debug)]
pub struct OutputRecord {
    pub output: LockedOutput,
    pub broadcast_time: Hours,
    pub confirm_time: Hours,
}

#[derive(Clone, Debug)]
pub struct Chain {
    pub id: ChainId,
    pub name: String,
    pub confirm_delay: Hours,
    clock: Hours,
    pending: Vec<PendingTx>,
    outputs: BTreeMap<OutPoint, OutputRecord>,
    spent: BTreeMap<OutPoint, SpendRecord>,
    balances: BTreeMap<PartyId, Coins>,
    reserved: BTreeMap<PartyId, Coins>,
    endowment: Coins,
    seen: std::collections::BTreeSet<TxId>,
}

impl Chain {
    pub fn new(id: ChainId, name: impl Into<String>, confirm_delay: Hours) -> Self {
        assert!(confirm_delay >= 0.0, "confirmation delay must be non-negative");
        Self {
            id,
            name: name.into(),
            confirm_delay,
            clock: 0.0,
            pending: Vec::new(),
            outputs: BTreeMap::new(),
            spent: BTreeMap::new(),
            balances: BTreeMap::new(),
            reserved: BTreeMap::new(),
            endowment: 0.0,
            seen: Default::default(),
        }
    }

    pub fn clock(&self) -> Hours {
        self.clock
    }

    pub fn endow(&mut self, party: PartyId, amount: Coins) {
        *self.balances.entry(party).or_default() += amount;
        self.endowment += amount;
    }

    pub fn balance(&self, party: PartyId) -> Coins {
        self.balances.get(&party).copied().unwrap_or(0.0)
    }

    pub fn output(&self, op: &OutPoint) -> Option<&OutputRecord> {
        self.outputs.get(op)
    }

    pub fn spend_of(&self, op: &OutPoint) -> Option<&SpendRecord> {
        self.spent.get(op)
    }

    pub fn is_unspent(&self, op: &OutPoint) -> bool {
        self.outputs.contains_key(op) && !self.spent.contains_key(op)
    }

    /// True if some pending transaction spends `op`.
    pub fn has_pending_spend(&self, op: &OutPoint) -> bool {
        self.pending.iter().any(|p| p.tx.spends.iter().any(|s| &s.output == op))
    }

    /// Pending spend of `op` that confirms first, with its broadcast time.
    pub fn first_pending_spend(&self, op: &OutPoint) -> Option<(&Transaction, Hours)> {
        self.pending
            .iter()
            .filter(|p| p.tx.spends.iter().any(|s| &s.output == op))
            .min_by(|a, b| a.confirm_time.total_cmp(&b.confirm_time).then_with(|| a.tx.id.cmp(&b.tx.id)))
            .map(|p| (&p.tx, p.broadcast_time))
    }

    pub fn unspent(&self) -> impl Iterator<Item = (&OutPoint, &OutputRecord)> {
        self.outputs.iter().filter(|(op, _)| !self.spent.contains_key(*op))
    }

    pub fn locked_value(&self) -> Coins {
        self.unspent().map(|(_, r)| r.output.amount).sum()
    }

    /// Endowment equals free balances plus value in unspent outputs.
    pub fn is_conserved(&self) -> bool {
        let held: Coins = self.balances.values().sum::<Coins>() + self.locked_value();
        (held - self.endowment).abs() <= AMOUNT_TOL * self.endowment.max(1.0)
    }

    pub fn next_confirmation(&self) -> Option<Hours> {
        self.pending.iter().map(|p| p.confirm_time).reduce(f64::min)
    }

    fn validate(&self, tx: &Transaction, now: Hours) -> Result<Vec<usize>, LedgerError> {
        let mut branches = Vec::with_capacity(tx.spends.len());
        let mut inputs = 0.0;
        for (i, spend) in tx.spends.iter().enumerate() {
            if tx.spends[..i].iter().any(|s| s.output == spend.output) {
                return Err(LedgerError::AlreadySpent(spend.output.clone()));
            }
            let record = match self.outputs.get(&spend.output) {
                Some(r) => r,
                None => return Err(LedgerError::UnknownOutput(spend.output.clone())),
            };
            if self.spent.contains_key(&spend.output) {
                return Err(LedgerError::AlreadySpent(spend.output.clone()));
            }
            let shown: Vec<Digest> = spend.preimages.iter().map(Secret::digest).collect();
            let mut best = LedgerError::WrongClaimant;
            let mut found = None;
            for (b, branch) in record.output.branches.iter().enumerate() {
                match branch.check(spend.claimant, &shown, now) {
                    Ok(()) => {
                        found = Some(b);
                        break;
                    }
                    // Report the most specific failure.
                    Err(e) => {
                        if matches!(best, LedgerError::WrongClaimant)
                            || matches!(e, LedgerError::Timelock { .. })
                        {
                            best = e;
                        }
                    }
                }
            }
            branches.push(found.ok_or(best)?);
            inputs += record.output.amount;
        }
        for (party, amount) in &tx.funding {
            if *amount < 0.0 {
                return Err(LedgerError::InvalidOutput("negative funding"));
            }
            let free = self.balance(*party) - self.reserved.get(party).copied().unwrap_or(0.0);
            if free + AMOUNT_TOL < *amount {
                return Err(LedgerError::InsufficientFunds(*party));
            }
            inputs += amount;
        }
        let mut outputs = 0.0;
        for out in &tx.outputs {
            if out.amount() <= 0.0 {
                return Err(LedgerError::InvalidOutput("amount must be positive"));
            }
            if let TxOutput::Lock { branches, .. } = out {
                if branches.is_empty() || !branches.iter().all(SpendBranch::is_valid) {
                    return Err(LedgerError::InvalidOutput("lock needs valid branches"));
                }
            }
            outputs += out.amount();
        }
        if (inputs - outputs).abs() > AMOUNT_TOL * inputs.max(1.0) {
            return Err(LedgerError::ValueMismatch { inputs, outputs });
        }
        Ok(branches)
    }

    /// Validates `tx` against the confirmed state and schedules it to
    /// confirm at `now + confirm_delay`. Returns the confirmation time.
    pub fn broadcast(&mut self, tx: Transaction, now: Hours) -> Result<Hours, LedgerError> {
        if now < self.clock {
            return Err(LedgerError::TimeRegression { clock: self.clock, requested: now });
        }
        if self.seen.contains(&tx.id) {
            return Err(LedgerError::DuplicateTx(tx.id.clone()));
        }
        let branches = self.validate(&tx, now)?;
        self.clock = now;
        for (party, amount) in &tx.funding {
            *self.reserved.entry(*party).or_default() += amount;
        }
        let revealed = tx.spends.iter().flat_map(|s| s.preimages.iter().map(Secret::digest)).collect();
        let confirm_time = now + self.confirm_delay;
        self.seen.insert(tx.id.clone());
        self.pending.push(PendingTx { tx, broadcast_time: now, confirm_time, branches, revealed });
        Ok(confirm_time)
    }

    /// Confirms every pending transaction due by `to`, in (time, id) order.
    /// A transaction whose input was taken by an earlier confirmation is
    /// dropped.
    pub fn advance(&mut self, to: Hours) -> Result<Vec<LedgerEvent>, LedgerError> {
        if to < self.clock {
            return Err(LedgerError::TimeRegression { clock: self.clock, requested: to });
        }
        self.clock = to;
        let (mut due, rest): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.pending).into_iter().partition(|p| p.confirm_time <= to);
        self.pending = rest;
        due.sort_by(|a, b| a.confirm_time.total_cmp(&b.confirm_time).then_with(|| a.tx.id.cmp(&b.tx.id)));
        let mut events = Vec::with_capacity(due.len());
        for p in due {
            for (party, amount) in &p.tx.funding {
                *self.reserved.entry(*party).or_default() -= amount;
            }
            let conflict = p.tx.spends.iter().find(|s| self.spent.contains_key(&s.output));
            if let Some(s) = conflict {
                log::debug!("{} dropped: {:?} already spent", p.tx.id, s.output);
                events.push(LedgerEvent {
                    time: p.confirm_time,
                    chain: self.id,
                    tx: p.tx.id.clone(),
                    kind: EventKind::Dropped,
                    revealed: p.revealed,
                    reason: Some(LedgerError::AlreadySpent(s.output.clone()).to_string()),
                });
                continue;
            }
            self.apply(&p);
            events.push(LedgerEvent {
                time: p.confirm_time,
                chain: self.id,
                tx: p.tx.id.clone(),
                kind: EventKind::Confirmed,
                revealed: p.revealed,
                reason: None,
            });
        }
        Ok(events)
    }

    fn apply(&mut self, p: &PendingTx) {
        for (party, amount) in &p.tx.funding {
            *self.balances.entry(*party).or_default() -= amount;
        }
        for (spend, &branch) in p.tx.spends.iter().zip(&p.branches) {
            let amount = self.outputs[&spend.output].output.amount;
            self.spent.insert(
                spend.output.clone(),
                SpendRecord {
                    tx: p.tx.id.clone(),
                    claimant: spend.claimant,
                    branch,
                    amount,
                    broadcast_time: p.broadcast_time,
                    confirm_time: p.confirm_time,
                },
            );
        }
        for (index, out) in p.tx.outputs.iter().enumerate() {
            match out {
                TxOutput::Pay { party, amount } => *self.balances.entry(*party).or_default() += amount,
                TxOutput::Lock { amount, branches } => {
                    self.outputs.insert(
                        OutPoint { tx: p.tx.id.clone(), index },
                        OutputRecord {
                            output: LockedOutput {
                                amount: *amount,
                                branches: branches.clone(),
                                origin: p.tx.id.clone(),
                            },
                            broadcast_time: p.broadcast_time,
                            confirm_time: p.confirm_time,
                        },
                    );
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum RevealPolicy {
    /// Visible at broadcast plus the observation delay.
    #[default]
    Broadcast,
    /// Visible at confirmation plus the observation delay.
    Confirmation,
}

#[derive(Clone, Debug)]
pub struct Revelation {
    pub digest: Digest,
    pub secret: Secret,
    pub chain: ChainId,
    pub tx: TxId,
    pub broadcast_time: Hours,
    pub confirm_time: Option<Hours>,
}

/// A set of chains sharing one clock, an event log and a preimage board.
#[derive(Clone, Debug)]
pub struct World {
    chains: Vec<Chain>,
    clock: Hours,
    observe_delay: Hours,
    policy: RevealPolicy,
    log: Vec<LedgerEvent>,
    revelations: Vec<Revelation>,
}

impl World {
    pub fn new(observe_delay: Hours, policy: RevealPolicy) -> Self {
        Self { chains: Vec::new(), clock: 0.0, observe_delay, policy, log: Vec::new(), revelations: Vec::new() }
    }

    pub fn add_chain(&mut self, name: impl Into<String>, confirm_delay: Hours) -> ChainId {
        let id = ChainId(self.chains.len());
        self.chains.push(Chain::new(id, name, confirm_delay));
        id
    }

    pub fn clock(&self) -> Hours {
        self.clock
    }

    pub fn chain(&self, id: ChainId) -> &Chain {
        &self.chains[id.0]
    }

    pub fn chain_mut(&mut self, id: ChainId) -> &mut Chain {
        &mut self.chains[id.0]
    }

    pub fn chains(&self) -> &[Chain] {
        &self.chains
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.log
    }

    pub fn revelations(&self) -> &[Revelation] {
        &self.revelations
    }

    pub fn broadcast(&mut self, chain: ChainId, tx: Transaction, now: Hours) -> Result<Hours, LedgerError> {
        let id = tx.id.clone();
        let secrets: Vec<Secret> = tx.spends.iter().flat_map(|s| s.preimages.iter().copied()).collect();
        match self.chains[chain.0].broadcast(tx, now) {
            Ok(confirm) => {
                self.clock = self.clock.max(now);
                for secret in &secrets {
                    self.revelations.push(Revelation {
                        digest: secret.digest(),
                        secret: *secret,
                        chain,
                        tx: id.clone(),
                        broadcast_time: now,
                        confirm_time: None,
                    });
                }
                self.log.push(LedgerEvent {
                    time: now,
                    chain,
                    tx: id,
                    kind: EventKind::Broadcast,
                    revealed: secrets.iter().map(Secret::digest).collect(),
                    reason: None,
                });
                Ok(confirm)
            }
            Err(e) => {
                self.log.push(LedgerEvent {
                    time: now,
                    chain,
                    tx: id,
                    kind: EventKind::Rejected,
                    revealed: Vec::new(),
                    reason: Some(e.to_string()),
                });
                Err(e)
            }
        }
    }

    /// Advances every chain to `to` and returns the merged confirmation
    /// events ordered by (time, tx id).
    pub fn advance(&mut self, to: Hours) -> Result<Vec<LedgerEvent>, LedgerError> {
        if to < self.clock {
            return Err(LedgerError::TimeRegression { clock: self.clock, requested: to });
        }
        let mut events = Vec::new();
        for chain in &mut self.chains {
            events.extend(chain.advance(to)?);
        }
        events.sort_by(|a, b| a.time.total_cmp(&b.time).then_with(|| a.tx.cmp(&b.tx)));
        for pair in events.windows(2) {
            if pair[0].time == pair[1].time && pair[0].chain != pair[1].chain {
                log::debug!("simultaneous confirmations {} and {} ordered by id", pair[0].tx, pair[1].tx);
            }
        }
        for e in &events {
            if e.kind == EventKind::Confirmed {
                for r in self.revelations.iter_mut().filter(|r| r.tx == e.tx && r.chain == e.chain) {
                    r.confirm_time = Some(e.time);
                }
            }
        }
        self.clock = to;
        self.log.extend(events.iter().cloned());
        Ok(events)
    }

    pub fn next_confirmation(&self) -> Option<Hours> {
        self.chains.iter().filter_map(Chain::next_confirmation).reduce(f64::min)
    }

    /// Earliest time at which other parties can see the preimage of `digest`.
    pub fn visible_at(&self, digest: &Digest) -> Option<(Hours, Secret)> {
        self.revelations
            .iter()
            .filter(|r| &r.digest == digest)
            .filter_map(|r| {
                let at = match self.policy {
                    RevealPolicy::Broadcast => Some(r.broadcast_time),
                    RevealPolicy::Confirmation => r.confirm_time,
                }?;
                Some((at + self.observe_delay, r.secret))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    /// Free balance of `party` on every chain.
    pub fn balance(&self, party: PartyId) -> Vec<(ChainId, Coins)> {
        self.chains.iter().map(|c| (c.id, c.balance(party))).collect()
    }

    pub fn is_conserved(&self) -> bool {
        self.chains.iter().all(Chain::is_conserved)
    }
}

/// Writes events as line-delimited JSON.
pub fn write_jsonl<W: Write>(events: &[LedgerEvent], mut w: W) -> io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
