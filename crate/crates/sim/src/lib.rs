//! Discrete-event simulation of HTLC, Quick Swap and cyclic Quick Swap
//! executions on a minimal multi-chain ledger.

pub mod cyclic;
pub mod engine;
pub mod ledger;
pub mod plan;
pub mod protocol;
pub mod verdict;

pub use cyclic::{generate, run_cyclic, CyclicPlan, CyclicSpec};
pub use engine::{run_plan, PriceRule, Reject, RunConfig, Strategy, ThresholdRule, Trace};
pub use ledger::{ChainId, Hours, PartyId, World};
pub use plan::{LockPlan, Phase};
pub use protocol::{build_htlc_instance, build_quickswap_instance, ProtocolInstance, StrategyProfile};
pub use verdict::{Outcome, TraceVerdict};
