//! Datasets and non-i.i.d. partitioning.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{FdError, Result};
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(FdError::Schema(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if n_classes == 0 {
            return Err(FdError::Schema("n_classes must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(FdError::Schema(format!(
                "label {bad} not below n_classes {n_classes}"
            )));
        }
        if let Some(first) = features.first() {
            let dim = first.len();
            if let Some((i, row)) = features.iter().enumerate().find(|(_, r)| r.len() != dim) {
                return Err(FdError::Schema(format!(
                    "sample {i} has {} features, expected {dim}",
                    row.len()
                )));
            }
        }
        Ok(Dataset {
            features,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> (&[f64], usize) {
        (&self.features[i], self.labels[i])
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Per-class mean feature vector; classes without samples get zeros.
    pub fn centroids(&self) -> Vec<Vec<f64>> {
        let mut sums = vec![vec![0.0; self.dim()]; self.n_classes];
        let counts = self.class_counts();
        for (x, &l) in self.features.iter().zip(&self.labels) {
            for (s, v) in sums[l].iter_mut().zip(x) {
                *s += v;
            }
        }
        for (s, &c) in sums.iter_mut().zip(&counts) {
            if c > 0 {
                s.iter_mut().for_each(|v| *v /= c as f64);
            }
        }
        sums
    }
}

/// Isotropic Gaussian clusters, one per class.
///
/// Centres are a pure function of the seed, so a training and a test set
/// drawn from the same generator share their class geometry.
#[derive(Debug, Clone)]
pub struct BlobGenerator {
    centers: Vec<Vec<f64>>,
    spread: f64,
}

impl BlobGenerator {
    pub fn new(n_classes: usize, dim: usize, spread: f64, seed: u64) -> Result<Self> {
        if n_classes == 0 || dim == 0 {
            return Err(FdError::config("blobs need positive n_classes and dim"));
        }
        if !(spread >= 0.0 && spread.is_finite()) {
            return Err(FdError::config(format!("blob spread must be >= 0, got {spread}")));
        }
        let mut rng = stream(seed, "blob-centers", 0);
        let unit = Normal::new(0.0, 1.0).unwrap();
        let centers = (0..n_classes)
            .map(|_| (0..dim).map(|_| unit.sample(&mut rng)).collect())
            .collect();
        Ok(BlobGenerator { centers, spread })
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    /// `samples_per_class` points for every class, class-major order.
    pub fn sample(&self, samples_per_class: usize, seed: u64) -> Result<Dataset> {
        if samples_per_class == 0 {
            return Err(FdError::config("samples_per_class must be positive"));
        }
        let mut rng = stream(seed, "blob-samples", 0);
        let unit = Normal::new(0.0, 1.0).unwrap();
        let n_classes = self.centers.len();
        let mut features = Vec::with_capacity(n_classes * samples_per_class);
        let mut labels = Vec::with_capacity(n_classes * samples_per_class);
        for (class, center) in self.centers.iter().enumerate() {
            for _ in 0..samples_per_class {
                features.push(
                    center
                        .iter()
                        .map(|c| c + self.spread * unit.sample(&mut rng))
                        .collect(),
                );
                labels.push(class);
            }
        }
        Dataset::new(features, labels, n_classes)
    }
}

pub fn gen_blobs(
    n_classes: usize,
    samples_per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    BlobGenerator::new(n_classes, dim, spread, seed)?
        .sample(samples_per_class, derive_seed(seed, "blob-train", 0))
}

/// Reads the `label,f0,f1,...` CSV layout.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.get(0) != Some("label") {
        return Err(FdError::Parse {
            path: path.into(),
            line: 1,
            message: "header must start with `label`".into(),
        });
    }
    for (i, name) in header.iter().skip(1).enumerate() {
        if name != format!("f{i}") {
            return Err(FdError::Parse {
                path: path.into(),
                line: 1,
                message: format!("expected header column `f{i}`, found `{name}`"),
            });
        }
    }
    let dim = header.len() - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != dim + 1 {
            return Err(FdError::Schema(format!(
                "{}:{line}: expected {} fields, found {}",
                path.display(),
                dim + 1,
                row.len()
            )));
        }
        let parse_err = |message: String| FdError::Parse {
            path: path.into(),
            line,
            message,
        };
        let label: usize = row[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("invalid label `{}`", &row[0])))?;
        let x = row
            .iter()
            .skip(1)
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(format!("invalid feature value `{f}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        labels.push(label);
        features.push(x);
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    if labels.is_empty() {
        return Err(FdError::Schema(format!("{}: no samples", path.display())));
    }
    Dataset::new(features, labels, n_classes)
}

fn csv_error(path: &Path, e: csv::Error) -> FdError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => FdError::io(path, source),
        other => FdError::Parse {
            path: path.into(),
            line,
            message: format!("{other:?}"),
        },
    }
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| FdError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>, s: &str| {
        out.write_all(s.as_bytes()).map_err(|e| FdError::io(path, e))
    };
    let mut header = String::from("label");
    for i in 0..ds.dim() {
        header.push_str(&format!(",f{i}"));
    }
    header.push('\n');
    write(&mut out, &header)?;
    for (x, l) in ds.features.iter().zip(&ds.labels) {
        let mut line = l.to_string();
        for v in x {
            line.push(',');
            line.push_str(&v.to_string());
        }
        line.push('\n');
        write(&mut out, &line)?;
    }
    out.flush().map_err(|e| FdError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub n_clients: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(FdError::config("partition.n_clients must be >= 1"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(FdError::config(format!(
                "partition.alpha must be > 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

const MAX_PARTITION_ATTEMPTS: u64 = 100;

/// Splits sample indices across clients with per-class Dirichlet proportions.
///
/// For every class the indices are shuffled and cut at the cumulative
/// proportions drawn from `Dirichlet(alpha, ..., alpha)`. A draw that leaves
/// some client empty is repeated with `seed + 1`, at most 100 times.
pub fn dirichlet_partition(labels: &[usize], spec: &PartitionSpec) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    if labels.is_empty() {
        return Err(FdError::usage("cannot partition an empty label list"));
    }
    if spec.n_clients > labels.len() {
        return Err(FdError::config(format!(
            "{} clients but only {} samples",
            spec.n_clients,
            labels.len()
        )));
    }
    let n_classes = labels.iter().max().unwrap() + 1;
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for attempt in 0..MAX_PARTITION_ATTEMPTS {
        let shards = draw_partition(&by_class, spec, spec.seed.wrapping_add(attempt));
        if shards.iter().all(|s| !s.is_empty()) {
            return Ok(shards);
        }
    }
    Err(FdError::config(format!(
        "no partition without empty shards after {MAX_PARTITION_ATTEMPTS} draws \
         (n_clients={}, alpha={})",
        spec.n_clients, spec.alpha
    )))
}

fn draw_partition(by_class: &[Vec<usize>], spec: &PartitionSpec, seed: u64) -> Vec<Vec<usize>> {
    let k = spec.n_clients;
    let mut rng = stream(seed, "dirichlet", 0);
    let gamma = Gamma::new(spec.alpha, 1.0).unwrap();
    let mut shards = vec![Vec::new(); k];
    for class_indices in by_class {
        let mut idx = class_indices.clone();
        idx.shuffle(&mut rng);
        let mut props: Vec<f64> = (0..k).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = props.iter().sum();
        if total > 0.0 && total.is_finite() {
            props.iter_mut().for_each(|p| *p /= total);
        } else {
            // every gamma draw underflowed; put the whole class on one client
            props = vec![0.0; k];
            props[rng.random_range(0..k)] = 1.0;
        }
        let n = idx.len();
        let mut start = 0;
        let mut cum = 0.0;
        for (c, p) in props.iter().enumerate() {
            cum += p;
            let end = if c + 1 == k {
                n
            } else {
                ((cum * n as f64) as usize).clamp(start, n)
            };
            shards[c].extend_from_slice(&idx[start..end]);
            start = end;
        }
    }
    for s in &mut shards {
        s.sort_unstable();
    }
    shards
}

/// Fraction of each class within one shard.
pub fn class_proportions(shard: &[usize], labels: &[usize], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0.0; n_classes];
    for &i in shard {
        counts[labels[i]] += 1.0;
    }
    let n = shard.len().max(1) as f64;
    counts.into_iter().map(|c| c / n).collect()
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}
