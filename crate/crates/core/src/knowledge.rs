//! Knowledge exchange: extraction, server-side aggregation and distribution.
//!
//! Uploaded knowledge is raw logits. Aggregation always walks records sorted by
//! `(client_id, sample_id)`, which makes every protocol independent of arrival
//! order and bit-reproducible.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{FdError, Result};
use crate::nn::{LogitVector, ModelParams};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeRecord {
    pub client_id: usize,
    pub sample_id: usize,
    pub logits: LogitVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Per-sample mean over contributing clients.
    SampleAvg,
    /// Per-class mean over other clients' records (leave-one-out).
    #[default]
    LabelAvg,
    /// Mean of the nearest other-client entries in a projected feature space.
    CacheLite,
}

/// Representation a client uploads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeForm {
    /// Raw model outputs.
    #[default]
    Logits,
    /// Softmax of the raw outputs.
    Softmax,
}

impl KnowledgeForm {
    pub fn apply(self, mut records: Vec<KnowledgeRecord>) -> Vec<KnowledgeRecord> {
        if self == KnowledgeForm::Softmax {
            for r in &mut records {
                r.logits = crate::nn::softmax(&r.logits);
            }
        }
        records
    }
}

/// Distillation targets for one client, keyed by sample id.
pub type TargetMap = BTreeMap<usize, LogitVector>;

/// One record per local sample holding the model's raw logits.
pub fn extract_knowledge(
    client_id: usize,
    params: &ModelParams,
    shard: &[usize],
    features: &[Vec<f64>],
) -> Result<Vec<KnowledgeRecord>> {
    shard
        .iter()
        .map(|&s| {
            Ok(KnowledgeRecord {
                client_id,
                sample_id: s,
                logits: params.forward(&features[s])?,
            })
        })
        .collect()
}

/// Server-side knowledge after one aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalKnowledge {
    pub protocol: Protocol,
    pub n_classes: usize,
    /// Sample id (SampleAvg, CacheLite) or class (LabelAvg) to mean logits.
    pub entries: BTreeMap<usize, LogitVector>,
    contributors: BTreeSet<usize>,
    /// This round's records in `(client_id, sample_id)` order.
    records: Vec<KnowledgeRecord>,
}

impl GlobalKnowledge {
    pub fn contributors(&self) -> &BTreeSet<usize> {
        &self.contributors
    }

    pub fn records(&self) -> &[KnowledgeRecord] {
        &self.records
    }
}

/// Running mean: `m += (x - m) / n`. Exact when every input is identical.
#[derive(Debug, Clone)]
struct Mean {
    value: Vec<f64>,
    count: usize,
}

impl Mean {
    fn new(n: usize) -> Self {
        Mean {
            value: vec![0.0; n],
            count: 0,
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for (m, v) in self.value.iter_mut().zip(x) {
            *m += (v - *m) / n;
        }
    }

    fn finish(self) -> Option<Vec<f64>> {
        (self.count > 0).then_some(self.value)
    }
}

/// Aggregates every client's upload under `protocol`.
///
/// `labels` maps global sample ids to their true class.
pub fn aggregate(
    records: &[KnowledgeRecord],
    labels: &[usize],
    n_classes: usize,
    protocol: Protocol,
) -> Result<GlobalKnowledge> {
    if records.is_empty() {
        return Err(FdError::Protocol("no knowledge records to aggregate".into()));
    }
    let mut sorted = records.to_vec();
    sorted.sort_by_key(|r| (r.client_id, r.sample_id));
    for r in &sorted {
        if r.logits.len() != n_classes {
            return Err(FdError::Protocol(format!(
                "client {} sample {}: {} logits, expected {n_classes}",
                r.client_id,
                r.sample_id,
                r.logits.len()
            )));
        }
        if r.logits.iter().any(|v| !v.is_finite()) {
            return Err(FdError::Protocol(format!(
                "client {} sample {}: non-finite logits",
                r.client_id, r.sample_id
            )));
        }
        if r.sample_id >= labels.len() {
            return Err(FdError::Index {
                index: r.sample_id,
                len: labels.len(),
            });
        }
    }

    let mut means: BTreeMap<usize, Mean> = BTreeMap::new();
    for r in &sorted {
        let key = match protocol {
            Protocol::SampleAvg | Protocol::CacheLite => r.sample_id,
            Protocol::LabelAvg => labels[r.sample_id],
        };
        means.entry(key).or_insert_with(|| Mean::new(n_classes)).push(&r.logits);
    }
    let entries = means
        .into_iter()
        .filter_map(|(k, m)| m.finish().map(|v| (k, v)))
        .collect();
    Ok(GlobalKnowledge {
        protocol,
        n_classes,
        entries,
        contributors: sorted.iter().map(|r| r.client_id).collect(),
        records: sorted,
    })
}

/// Seeded random projection used by CacheLite to relate samples.
#[derive(Debug, Clone)]
pub struct SampleEncoder {
    projection: Vec<Vec<f64>>,
}

impl SampleEncoder {
    pub fn new(input_dim: usize, encoding_dim: usize, seed: u64) -> Self {
        let mut rng = stream(seed, "cache-projection", 0);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let projection = (0..encoding_dim)
            .map(|_| (0..input_dim).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        SampleEncoder { projection }
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        self.projection
            .iter()
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheLiteConfig {
    pub neighbors: usize,
    pub encoding_dim: usize,
}

impl Default for CacheLiteConfig {
    fn default() -> Self {
        CacheLiteConfig {
            neighbors: 16,
            encoding_dim: 16,
        }
    }
}

/// Fixed nearest-neighbour lists for CacheLite.
///
/// Sample encodings never change, so neighbours are computed once: for every
/// sample, the `neighbors` most cosine-similar samples held by other clients
/// (ties broken by lower sample id).
#[derive(Debug, Clone)]
pub struct CacheIndex {
    neighbors: BTreeMap<usize, Vec<usize>>,
}

impl CacheIndex {
    pub fn build(
        features: &[Vec<f64>],
        shards: &[Vec<usize>],
        cfg: &CacheLiteConfig,
        seed: u64,
        exec: crate::exec::Execution,
    ) -> Result<Self> {
        if cfg.neighbors == 0 || cfg.encoding_dim == 0 {
            return Err(FdError::config(
                "protocol.neighbors and protocol.encoding_dim must be positive",
            ));
        }
        let dim = features.first().map_or(0, Vec::len);
        let encoder = SampleEncoder::new(dim, cfg.encoding_dim, seed);
        let mut owner = vec![usize::MAX; features.len()];
        for (c, shard) in shards.iter().enumerate() {
            for &s in shard {
                owner[s] = c;
            }
        }
        let held: Vec<usize> = (0..features.len()).filter(|&s| owner[s] != usize::MAX).collect();
        let codes: BTreeMap<usize, Vec<f64>> =
            held.iter().map(|&s| (s, encoder.encode(&features[s]))).collect();
        let lists = crate::exec::map(exec, &held, |&s| {
            let mut scored: Vec<(f64, usize)> = held
                .iter()
                .filter(|&&o| owner[o] != owner[s])
                .map(|&o| (cosine(&codes[&s], &codes[&o]), o))
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            scored.truncate(cfg.neighbors);
            (s, scored.into_iter().map(|(_, o)| o).collect::<Vec<_>>())
        });
        Ok(CacheIndex {
            neighbors: lists.into_iter().collect(),
        })
    }

    pub fn neighbors(&self, sample_id: usize) -> &[usize] {
        self.neighbors.get(&sample_id).map_or(&[], Vec::as_slice)
    }
}

/// Distillation targets for the samples in `shard` of client `client_id`.
///
/// Samples for which the protocol yields no target are absent from the map;
/// the client then trains on cross-entropy alone for them.
pub fn distribute(
    gk: &GlobalKnowledge,
    client_id: usize,
    shard: &[usize],
    labels: &[usize],
    cache: Option<&CacheIndex>,
) -> Result<TargetMap> {
    if !gk.contributors.contains(&client_id) {
        return Err(FdError::usage(format!(
            "client {client_id} did not take part in this aggregation"
        )));
    }
    match gk.protocol {
        Protocol::SampleAvg => Ok(shard
            .iter()
            .filter_map(|s| gk.entries.get(s).map(|v| (*s, v.clone())))
            .collect()),
        Protocol::LabelAvg => {
            let targets = leave_one_out_class_means(gk, client_id, labels);
            Ok(shard
                .iter()
                .filter_map(|&s| targets.get(&labels[s]).map(|v| (s, v.clone())))
                .collect())
        }
        Protocol::CacheLite => {
            let cache = cache.ok_or_else(|| {
                FdError::Protocol("cache_lite distribution needs a cache index".into())
            })?;
            let mut out = TargetMap::new();
            for &s in shard {
                let mut mean = Mean::new(gk.n_classes);
                for v in cache.neighbors(s).iter().filter_map(|n| gk.entries.get(n)) {
                    mean.push(v);
                }
                if let Some(v) = mean.finish() {
                    out.insert(s, v);
                }
            }
            Ok(out)
        }
    }
}

/// Per-class mean over every record not uploaded by `client_id`.
pub fn leave_one_out_class_means(
    gk: &GlobalKnowledge,
    client_id: usize,
    labels: &[usize],
) -> BTreeMap<usize, LogitVector> {
    let mut means: BTreeMap<usize, Mean> = BTreeMap::new();
    for r in gk.records.iter().filter(|r| r.client_id != client_id) {
        means
            .entry(labels[r.sample_id])
            .or_insert_with(|| Mean::new(gk.n_classes))
            .push(&r.logits);
    }
    means
        .into_iter()
        .filter_map(|(k, m)| m.finish().map(|v| (k, v)))
        .collect()
}

/// Synchronous aggregation server: collects one upload per client, then
/// aggregates once every client has reported.
#[derive(Debug)]
pub struct Server {
    n_clients: usize,
    n_classes: usize,
    protocol: Protocol,
    pending: BTreeMap<usize, Vec<KnowledgeRecord>>,
    latest: Option<GlobalKnowledge>,
}

impl Server {
    pub fn new(n_clients: usize, n_classes: usize, protocol: Protocol) -> Self {
        Server {
            n_clients,
            n_classes,
            protocol,
            pending: BTreeMap::new(),
            latest: None,
        }
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn receive(&mut self, client_id: usize, records: Vec<KnowledgeRecord>) -> Result<()> {
        if client_id >= self.n_clients {
            return Err(FdError::usage(format!(
                "upload from unknown client {client_id} (have {})",
                self.n_clients
            )));
        }
        if let Some(r) = records.iter().find(|r| r.client_id != client_id) {
            return Err(FdError::Protocol(format!(
                "client {client_id} uploaded a record labelled with client {}",
                r.client_id
            )));
        }
        if self.pending.contains_key(&client_id) {
            return Err(FdError::Protocol(format!(
                "client {client_id} uploaded twice in one round"
            )));
        }
        self.pending.insert(client_id, records);
        Ok(())
    }

    /// Barrier plus aggregation. Only the latest round is kept.
    pub fn aggregate(&mut self, labels: &[usize]) -> Result<&GlobalKnowledge> {
        let missing: Vec<usize> = (0..self.n_clients)
            .filter(|c| !self.pending.contains_key(c))
            .collect();
        if !missing.is_empty() {
            return Err(FdError::Barrier { missing });
        }
        let pending = std::mem::take(&mut self.pending);
        let contributors = pending.keys().copied().collect();
        let records: Vec<KnowledgeRecord> = pending.into_values().flatten().collect();
        let mut gk = aggregate(&records, labels, self.n_classes, self.protocol)?;
        gk.contributors = contributors;
        self.latest = Some(gk);
        Ok(self.latest.as_ref().unwrap())
    }

    pub fn latest(&self) -> Option<&GlobalKnowledge> {
        self.latest.as_ref()
    }
}

pub fn write_knowledge_header<W: Write>(out: &mut W, n_classes: usize) -> std::io::Result<()> {
    write!(out, "round,client_id,sample_id")?;
    for i in 0..n_classes {
        write!(out, ",logit_{i}")?;
    }
    writeln!(out)
}

pub fn write_knowledge_rows<W: Write>(
    out: &mut W,
    round: usize,
    records: &[KnowledgeRecord],
) -> std::io::Result<()> {
    for r in records {
        write!(out, "{round},{},{}", r.client_id, r.sample_id)?;
        for v in &r.logits {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
