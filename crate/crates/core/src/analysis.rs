//! Closed-form message counts per finalized block for six BFT protocols, in
//! the normal case and with `f` consecutive faulty leaders.
//!
//! The formulas are generic over the numeric type so they can be evaluated
//! exactly in integers or in floating point for plotting.

use std::fmt;
use std::str::FromStr;

use num_traits::Num;
use serde::{Deserialize, Serialize};

/// Numeric types the formulas can be evaluated in.
pub trait Scalar: Num + Copy + PartialOrd + From<u8> + fmt::Display {}

impl<T: Num + Copy + PartialOrd + From<u8> + fmt::Display> Scalar for T {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    ChainedHotstuff,
    SyncHotstuff,
    Pbft,
    Tendermint,
    Ebft,
    Pipelet,
}

impl Protocol {
    pub const ALL: [Protocol; 6] = [
        Protocol::ChainedHotstuff,
        Protocol::SyncHotstuff,
        Protocol::Pbft,
        Protocol::Tendermint,
        Protocol::Ebft,
        Protocol::Pipelet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::ChainedHotstuff => "chained_hotstuff",
            Protocol::SyncHotstuff => "sync_hotstuff",
            Protocol::Pbft => "pbft",
            Protocol::Tendermint => "tendermint",
            Protocol::Ebft => "ebft",
            Protocol::Pipelet => "pipelet",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = AnalysisError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| AnalysisError::UnknownProtocol(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalysisError {
    #[error("unknown protocol {0:?}")]
    UnknownProtocol(String),
    #[error("pbft needs the checkpoint constant c >= 1")]
    MissingC,
    #[error("ebft needs the checkpoint requester count k >= 1")]
    MissingK,
    #[error("n must be at least 1")]
    BadN,
    #[error("f must satisfy 0 <= f <= n")]
    BadF,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel<T> {
    pub protocol: Protocol,
    pub n: T,
    pub f: T,
    /// Checkpoint constant, PBFT only.
    pub c: Option<T>,
    /// Checkpoint requesters, EBFT only.
    pub k: Option<T>,
}

impl<T: Scalar> CostModel<T> {
    pub fn new(protocol: Protocol, n: T, f: T) -> Self {
        CostModel {
            protocol,
            n,
            f,
            c: None,
            k: None,
        }
    }

    pub fn with_c(mut self, c: T) -> Self {
        self.c = Some(c);
        self
    }

    pub fn with_k(mut self, k: T) -> Self {
        self.k = Some(k);
        self
    }

    fn validate(&self) -> Result<(), AnalysisError> {
        if self.n < T::one() {
            return Err(AnalysisError::BadN);
        }
        if self.f < T::zero() || self.f > self.n {
            return Err(AnalysisError::BadF);
        }
        Ok(())
    }

    fn c(&self) -> Result<T, AnalysisError> {
        self.c
            .filter(|c| *c >= T::one())
            .ok_or(AnalysisError::MissingC)
    }

    fn k(&self) -> Result<T, AnalysisError> {
        self.k
            .filter(|k| *k >= T::one())
            .ok_or(AnalysisError::MissingK)
    }
}

fn lit<T: Scalar>(x: u8) -> T {
    T::from(x)
}

/// Messages to finalize one block when every leader is honest.
pub fn normal_cost<T: Scalar>(m: &CostModel<T>) -> Result<T, AnalysisError> {
    m.validate()?;
    let (n, f) = (m.n, m.f);
    let one = T::one();
    let two = lit::<T>(2);
    Ok(match m.protocol {
        Protocol::ChainedHotstuff => two * n - f,
        Protocol::SyncHotstuff => two * (n - one) * (n - one),
        Protocol::Pbft => n * n + two * n * (f + one) - one,
        Protocol::Tendermint => n + lit::<T>(4) * f,
        Protocol::Ebft => two * (n + f) - one,
        Protocol::Pipelet => two * n - two,
    })
}

/// Messages to finalize one block after `f` consecutive faulty leaders.
pub fn failure_cost<T: Scalar>(m: &CostModel<T>) -> Result<T, AnalysisError> {
    m.validate()?;
    let (n, f) = (m.n, m.f);
    let one = T::one();
    let two = lit::<T>(2);
    Ok(match m.protocol {
        Protocol::ChainedHotstuff => f * (lit::<T>(3) * n - f - one) + two * n - f,
        Protocol::SyncHotstuff => {
            f * ((n - one) * (lit::<T>(5) * n - lit::<T>(3))) + two * (n - one) * (n - one)
        }
        Protocol::Pbft => {
            let c = m.c()?;
            f * (two * f + two * f * n) + c * n * (two * f + one) + n * n + two * n * (f + one)
                - one
        }
        Protocol::Tendermint => f * (n + lit::<T>(4) * f) + n + lit::<T>(4) * f,
        Protocol::Ebft => {
            let k = m.k()?;
            f * (two * f * (n + two)) + two * (n + f) - one + k * (n - one)
        }
        Protocol::Pipelet => f * (n * n + n - two) + two * n - two,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FRule {
    /// Largest tolerable fault count, floor((n - 1) / 3).
    MaxFaulty,
    Fixed(u64),
}

impl FRule {
    pub fn apply(self, n: u64) -> u64 {
        match self {
            FRule::MaxFaulty => n.saturating_sub(1) / 3,
            FRule::Fixed(f) => f,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow<T> {
    pub protocol: Protocol,
    pub normal: Vec<T>,
    pub failure: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table<T> {
    pub columns: Vec<(u64, u64)>,
    pub c: Option<u64>,
    pub k: Option<u64>,
    pub rows: Vec<TableRow<T>>,
}

/// Costs of every protocol at each `(n, f_rule(n))`.
pub fn table<T: Scalar + From<u32>>(
    n_values: &[u64],
    f_rule: FRule,
    c: Option<u64>,
    k: Option<u64>,
    protocols: &[Protocol],
) -> Result<Table<T>, AnalysisError> {
    let columns: Vec<(u64, u64)> = n_values.iter().map(|&n| (n, f_rule.apply(n))).collect();
    let conv = |x: u64| -> T { T::from(u32::try_from(x).expect("table sizes fit in u32")) };
    let mut rows = Vec::new();
    for &p in protocols {
        let mut normal = Vec::new();
        let mut failure = Vec::new();
        for &(n, f) in &columns {
            let m = CostModel {
                protocol: p,
                n: conv(n),
                f: conv(f),
                c: c.map(conv),
                k: k.map(conv),
            };
            normal.push(normal_cost(&m)?);
            failure.push(failure_cost(&m)?);
        }
        rows.push(TableRow {
            protocol: p,
            normal,
            failure,
        });
    }
    Ok(Table {
        columns,
        c,
        k,
        rows,
    })
}

impl<T: Scalar> Table<T> {
    /// One row per protocol and scenario; the header names every (n, f)
    /// column and the checkpoint constants.
    pub fn to_csv(&self) -> String {
        let show = |x: Option<u64>| x.map(|v| v.to_string()).unwrap_or_else(|| "none".into());
        let mut out = format!("protocol,scenario,c={},k={}", show(self.c), show(self.k));
        for (n, f) in &self.columns {
            out.push_str(&format!(",n={n} f={f}"));
        }
        out.push('\n');
        for r in &self.rows {
            for (scenario, vals) in [("normal", &r.normal), ("failure", &r.failure)] {
                out.push_str(r.protocol.as_str());
                out.push(',');
                out.push_str(scenario);
                out.push_str(",,");
                for v in vals.iter() {
                    out.push_str(&format!(",{v}"));
                }
                out.push('\n');
            }
        }
        out
    }
}
