//! Protocol-independent description of a swap as an ordered list of lock
//! steps. HTLC, two-party Quick Swap and cyclic swaps are all lock plans.

use serde::Serialize;
use thiserror::Error;

use crate::ledger::{ChainId, Coins, Digest, Hours, PartyId, SpendBranch};

/// Decision points of a party, in protocol order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Phase {
    PremiumLock,
    PrincipalLock,
    Claim,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::PremiumLock => "premium-lock",
            Phase::PrincipalLock => "principal-lock",
            Phase::Claim => "claim",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum LockKind {
    Principal,
    Premium,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum HashRole {
    Payment,
    Cancel(PartyId),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HashSpec {
    pub label: String,
    pub role: HashRole,
    pub owner: PartyId,
}

/// Meaning of each spend branch of a lock, parallel to its branch list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum BranchRole {
    /// Receiver takes a principal with the payment preimage.
    Claim,
    /// Timelock branch: owner refund for principals, receiver sweep for premiums.
    Timeout,
    /// Owner refunds a principal with the predecessor's cancellation preimage.
    EarlyRefund,
    /// Owner takes back a premium with the payment or own cancellation preimage.
    Release,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LockSpec {
    pub label: String,
    pub owner: PartyId,
    /// Principal: who claims it. Premium: who sweeps it after the timelock.
    pub receiver: PartyId,
    pub chain: ChainId,
    pub amount: Coins,
    pub kind: LockKind,
    /// Relative to the lock's broadcast time.
    pub locktime: Hours,
    pub claim_hash: Option<usize>,
    pub release_hashes: Vec<usize>,
    pub early_refund: Option<usize>,
}

impl LockSpec {
    /// Ledger branches for a lock broadcast at `at`, with their roles.
    pub fn branches(&self, digests: &[Digest], at: Hours) -> (Vec<SpendBranch>, Vec<BranchRole>) {
        let expiry = at + self.locktime;
        match self.kind {
            LockKind::Principal => {
                let mut b = Vec::with_capacity(3);
                let mut r = Vec::with_capacity(3);
                if let Some(h) = self.claim_hash {
                    b.push(SpendBranch::hashlock(self.receiver, vec![digests[h]]));
                    r.push(BranchRole::Claim);
                }
                b.push(SpendBranch::timelock(self.owner, expiry));
                r.push(BranchRole::Timeout);
                if let Some(h) = self.early_refund {
                    b.push(SpendBranch::hashlock(self.owner, vec![digests[h]]));
                    r.push(BranchRole::EarlyRefund);
                }
                (b, r)
            }
            LockKind::Premium => {
                let hashes = self.release_hashes.iter().map(|&h| digests[h]).collect();
                (
                    vec![SpendBranch::hashlock(self.owner, hashes), SpendBranch::timelock(self.receiver, expiry)],
                    vec![BranchRole::Release, BranchRole::Timeout],
                )
            }
        }
    }

    pub fn timeout_claimant(&self) -> PartyId {
        match self.kind {
            LockKind::Principal => self.owner,
            LockKind::Premium => self.receiver,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LockStep {
    pub party: PartyId,
    pub phase: Phase,
    /// Broadcast time when nobody delays.
    pub nominal_start: Hours,
    pub locks: Vec<LockSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainSpec {
    pub name: String,
    pub confirm_delay: Hours,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LockPlan {
    pub parties: Vec<String>,
    pub chains: Vec<ChainSpec>,
    pub hashes: Vec<HashSpec>,
    pub steps: Vec<LockStep>,
    /// Propagation delay t_ε.
    pub observe_delay: Hours,
    /// Grace δ before an early-premium holder cancels a stalled step.
    pub grace: Hours,
}

/// A lock with amounts of premiums erased, for comparing lock graphs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LockShape {
    pub step: usize,
    pub party: PartyId,
    pub phase: Phase,
    pub chain: ChainId,
    pub kind: LockKind,
    pub receiver: PartyId,
    pub locktime: Hours,
    pub nominal_start: Hours,
    pub claim: Option<HashRole>,
    pub release: Vec<HashRole>,
    pub early_refund: Option<HashRole>,
    pub principal_amount: Option<Coins>,
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("plan has no steps")]
    Empty,
    #[error("lock {0}: {1}")]
    BadLock(String, &'static str),
    #[error("unknown party, chain or hash index in {0}")]
    BadIndex(String),
    #[error("plan needs exactly one payment hash")]
    PaymentHash,
}

impl LockPlan {
    pub fn payment_hash(&self) -> Option<usize> {
        self.hashes.iter().position(|h| h.role == HashRole::Payment)
    }

    /// Owner of the payment preimage.
    pub fn initiator(&self) -> PartyId {
        self.payment_hash().map(|h| self.hashes[h].owner).unwrap_or(PartyId(0))
    }

    pub fn cancel_hash(&self, p: PartyId) -> Option<usize> {
        self.hashes.iter().position(|h| h.role == HashRole::Cancel(p))
    }

    pub fn locks(&self) -> impl Iterator<Item = (usize, &LockSpec)> {
        self.steps.iter().enumerate().flat_map(|(k, s)| s.locks.iter().map(move |l| (k, l)))
    }

    /// Phases at which `p` decides something.
    pub fn phases(&self, p: PartyId) -> Vec<Phase> {
        let mut v: Vec<Phase> = self.steps.iter().filter(|s| s.party == p).map(|s| s.phase).collect();
        v.push(Phase::Claim);
        v.dedup();
        v
    }

    pub fn step_delay(&self, k: usize) -> Hours {
        self.steps[k].locks.iter().map(|l| self.chains[l.chain.0].confirm_delay).fold(0.0, f64::max)
    }

    pub fn max_confirm_delay(&self) -> Hours {
        self.chains.iter().map(|c| c.confirm_delay).fold(0.0, f64::max)
    }

    pub fn max_locktime(&self) -> Hours {
        self.locks().map(|(_, l)| l.locktime).fold(0.0, f64::max)
    }

    /// Coins each party must hold per chain: `[party][chain]`.
    pub fn endowments(&self) -> Vec<Vec<Coins>> {
        let mut e = vec![vec![0.0; self.chains.len()]; self.parties.len()];
        for (_, l) in self.locks() {
            e[l.owner.0][l.chain.0] += l.amount;
        }
        e
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.steps.is_empty() {
            return Err(PlanError::Empty);
        }
        if self.hashes.iter().filter(|h| h.role == HashRole::Payment).count() != 1 {
            return Err(PlanError::PaymentHash);
        }
        let np = self.parties.len();
        for h in &self.hashes {
            if h.owner.0 >= np {
                return Err(PlanError::BadIndex(h.label.clone()));
            }
        }
        for step in &self.steps {
            if step.party.0 >= np {
                return Err(PlanError::BadIndex(format!("step of {}", step.party)));
            }
            for l in &step.locks {
                let hashes_ok = l
                    .claim_hash
                    .iter()
                    .chain(l.early_refund.iter())
                    .chain(l.release_hashes.iter())
                    .all(|&h| h < self.hashes.len());
                if l.owner.0 >= np || l.receiver.0 >= np || l.chain.0 >= self.chains.len() || !hashes_ok {
                    return Err(PlanError::BadIndex(l.label.clone()));
                }
                if !(l.amount > 0.0) {
                    return Err(PlanError::BadLock(l.label.clone(), "amount must be positive"));
                }
                if !(l.locktime > 0.0) {
                    return Err(PlanError::BadLock(l.label.clone(), "locktime must be positive"));
                }
                match l.kind {
                    LockKind::Principal if l.claim_hash.is_none() => {
                        return Err(PlanError::BadLock(l.label.clone(), "principal needs a claim hash"))
                    }
                    LockKind::Premium if l.release_hashes.is_empty() => {
                        return Err(PlanError::BadLock(l.label.clone(), "premium needs release hashes"))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> Vec<LockShape> {
        let role = |h: usize| self.hashes[h].role;
        self.locks()
            .map(|(k, l)| LockShape {
                step: k,
                party: l.owner,
                phase: self.steps[k].phase,
                chain: l.chain,
                kind: l.kind,
                receiver: l.receiver,
                locktime: l.locktime,
                nominal_start: self.steps[k].nominal_start,
                claim: l.claim_hash.map(role),
                release: l.release_hashes.iter().map(|&h| role(h)).collect(),
                early_refund: l.early_refund.map(role),
                principal_amount: (l.kind == LockKind::Principal).then_some(l.amount),
            })
            .collect()
    }
}
