//! Logits-poisoning strategies applied to a malicious client's upload.
//!
//! Every transform works on a copy of the outgoing records; the client's own
//! extracted knowledge is never touched.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FdError, Result};
use crate::knowledge::KnowledgeRecord;
use crate::nn::LogitVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    #[serde(rename = "random")]
    RandomPoison,
    #[serde(rename = "zero")]
    ZeroPoison,
    Fdla,
    Pcfdla,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::None,
        AttackKind::RandomPoison,
        AttackKind::ZeroPoison,
        AttackKind::Fdla,
        AttackKind::Pcfdla,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::RandomPoison => "random",
            AttackKind::ZeroPoison => "zero",
            AttackKind::Fdla => "fdla",
            AttackKind::Pcfdla => "pcfdla",
        }
    }

    /// Default local-training target for an attacker of this kind.
    pub fn default_local_distill(self) -> LocalDistill {
        match self {
            AttackKind::Pcfdla => LocalDistill::Clean,
            AttackKind::Fdla => LocalDistill::Poisoned,
            _ => LocalDistill::Global,
        }
    }
}

/// What a malicious client distills from during its own local training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalDistill {
    /// The global knowledge it received, like an honest client.
    #[default]
    Global,
    /// Its own unpoisoned knowledge from the previous round.
    Clean,
    /// The poisoned knowledge it uploaded in the previous round.
    Poisoned,
}

impl LocalDistill {
    pub fn name(self) -> &'static str {
        match self {
            LocalDistill::Global => "global",
            LocalDistill::Clean => "clean",
            LocalDistill::Poisoned => "poisoned",
        }
    }
}

impl std::str::FromStr for AttackKind {
    type Err = FdError;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| FdError::config(format!("unknown attack kind `{s}`")))
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// Peak magnitude `S` for PCFDLA.
    pub peak: f64,
    pub rng_seed: u64,
    pub local_distill: LocalDistill,
    /// Put the peak at absolute position 1 instead of at the runner-up class.
    pub literal_index: bool,
}

impl AttackConfig {
    pub fn none() -> Self {
        AttackConfig {
            kind: AttackKind::None,
            peak: DEFAULT_PEAK,
            rng_seed: 0,
            local_distill: LocalDistill::Global,
            literal_index: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == AttackKind::Pcfdla && !(self.peak > 0.0 && self.peak.is_finite()) {
            return Err(FdError::config(format!(
                "attack.peak must be > 0 for pcfdla, got {}",
                self.peak
            )));
        }
        Ok(())
    }
}

pub const DEFAULT_PEAK: f64 = 5.0;

/// Indices ordered by descending value; equal values keep ascending index order.
pub fn rank_order(c: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..c.len()).collect();
    idx.sort_by(|&a, &b| c[b].total_cmp(&c[a]));
    idx
}

/// Index of the second-highest entry under the same tie-breaking as [`rank_order`].
pub fn runner_up(c: &[f64]) -> Option<usize> {
    if c.len() < 2 {
        return None;
    }
    Some(rank_order(c)[1])
}

pub fn random_poison<R: Rng + ?Sized>(c: &[f64], rng: &mut R) -> LogitVector {
    c.iter().map(|_| rng.random::<f64>()).collect()
}

pub fn zero_poison(c: &[f64]) -> LogitVector {
    vec![0.0; c.len()]
}

fn require_two_classes(c: &[f64]) -> Result<()> {
    if c.len() < 2 {
        return Err(FdError::config(format!(
            "logit attacks need at least 2 classes, got {}",
            c.len()
        )));
    }
    Ok(())
}

/// Rotates values down the rank order: the top position receives the lowest
/// value and the position of rank `k` receives the value of rank `k - 1`.
pub fn fdla_transform(c: &[f64]) -> Result<LogitVector> {
    require_two_classes(c)?;
    let order = rank_order(c);
    let n = order.len();
    let mut out = vec![0.0; n];
    out[order[0]] = c[order[n - 1]];
    for k in 1..n {
        out[order[k]] = c[order[k - 1]];
    }
    Ok(out)
}

/// `peak` at the runner-up class, `-peak` everywhere else.
pub fn pcfdla_transform(c: &[f64], peak: f64) -> Result<LogitVector> {
    require_two_classes(c)?;
    let target = rank_order(c)[1];
    Ok(peak_at(c.len(), target, peak))
}

/// PCFDLA reading the peak condition as absolute index 1 (the second class).
pub fn pcfdla_literal_transform(c: &[f64], peak: f64) -> Result<LogitVector> {
    require_two_classes(c)?;
    Ok(peak_at(c.len(), 1, peak))
}

fn peak_at(n: usize, index: usize, peak: f64) -> LogitVector {
    let mut out = vec![-peak; n];
    out[index] = peak;
    out
}

/// Applies the configured attack to a copy of `records`.
pub fn apply_attack<R: Rng + ?Sized>(
    records: &[KnowledgeRecord],
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<Vec<KnowledgeRecord>> {
    cfg.validate()?;
    records
        .iter()
        .map(|r| {
            let logits = match cfg.kind {
                AttackKind::None => r.logits.clone(),
                AttackKind::RandomPoison => random_poison(&r.logits, rng),
                AttackKind::ZeroPoison => zero_poison(&r.logits),
                AttackKind::Fdla => fdla_transform(&r.logits)?,
                AttackKind::Pcfdla if cfg.literal_index => {
                    pcfdla_literal_transform(&r.logits, cfg.peak)?
                }
                AttackKind::Pcfdla => pcfdla_transform(&r.logits, cfg.peak)?,
            };
            Ok(KnowledgeRecord {
                client_id: r.client_id,
                sample_id: r.sample_id,
                logits,
            })
        })
        .collect()
}
