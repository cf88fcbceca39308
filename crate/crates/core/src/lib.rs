pub mod adversary;
pub mod analysis;
pub mod baselines;
pub mod chain;
pub mod checkers;
pub mod crypto;
pub mod experiment;
pub mod protocol;
pub mod simnet;
pub mod time;

pub type Cost = u64;
pub type CostModel = analysis::CostModel<Cost>;
