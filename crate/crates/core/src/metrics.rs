//! Accuracy metrics, confusion counting and the PCA stealth projection.

use crate::data::Dataset;
use crate::error::{FdError, Result};
use crate::nn::{argmax, ModelParams};

/// Row = true class, column = predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix {
            n: n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(FdError::usage("confusion matrix must be square"));
        }
        Ok(ConfusionMatrix {
            n,
            counts: rows.concat(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.n + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> Result<u64> {
        for idx in [truth, predicted] {
            if idx >= self.n {
                return Err(FdError::Index { index: idx, len: self.n });
            }
        }
        Ok(self.counts[truth * self.n + predicted])
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.n..(truth + 1) * self.n]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

/// Accuracy and confusion counts of one model on `test`.
pub fn evaluate(params: &ModelParams, test: &Dataset) -> Result<(f64, ConfusionMatrix)> {
    if test.is_empty() {
        return Err(FdError::usage("empty test set"));
    }
    let mut confusion = ConfusionMatrix::new(test.n_classes());
    let mut correct = 0usize;
    for (x, &y) in test.features().iter().zip(test.labels()) {
        let pred = argmax(&params.forward(x)?);
        if pred >= test.n_classes() {
            return Err(FdError::Shape {
                expected: test.n_classes(),
                actual: params.n_classes(),
            });
        }
        confusion.record(y, pred);
        correct += usize::from(pred == y);
    }
    Ok((correct as f64 / test.len() as f64, confusion))
}

pub fn accuracy(params: &ModelParams, test: &Dataset) -> Result<f64> {
    evaluate(params, test).map(|(acc, _)| acc)
}

/// Mean accuracy over all clients.
pub fn tol_avg_acc(accs: &[f64]) -> Result<f64> {
    if accs.is_empty() {
        return Err(FdError::usage("no client accuracies"));
    }
    Ok(accs.iter().sum::<f64>() / accs.len() as f64)
}

/// Mean accuracy over honest clients only.
pub fn vctm_avg_acc(accs: &[f64], honest_mask: &[bool]) -> Result<f64> {
    if accs.len() != honest_mask.len() {
        return Err(FdError::usage(format!(
            "{} accuracies but {} mask entries",
            accs.len(),
            honest_mask.len()
        )));
    }
    let honest: Vec<f64> = accs
        .iter()
        .zip(honest_mask)
        .filter(|(_, &h)| h)
        .map(|(&a, _)| a)
        .collect();
    if honest.is_empty() {
        return Err(FdError::usage("no honest clients to average over"));
    }
    tol_avg_acc(&honest)
}

pub fn misdirection_count(
    confusion: &ConfusionMatrix,
    true_class: usize,
    decoy_class: usize,
) -> Result<u64> {
    confusion.get(true_class, decoy_class)
}

/// Class that most often ranks second under a nearest-centroid rule on the
/// samples of `true_class`. Depends only on the data, never on a model.
pub fn modal_runner_up(centroids: &[Vec<f64>], samples: &Dataset, true_class: usize) -> Result<usize> {
    if centroids.len() < 2 {
        return Err(FdError::usage("need at least two classes for a runner-up"));
    }
    if true_class >= centroids.len() {
        return Err(FdError::Index {
            index: true_class,
            len: centroids.len(),
        });
    }
    let mut votes = vec![0usize; centroids.len()];
    for (x, _) in samples
        .features()
        .iter()
        .zip(samples.labels())
        .filter(|(_, &l)| l == true_class)
    {
        let neg_dist: Vec<f64> = centroids
            .iter()
            .map(|c| -c.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .collect();
        votes[crate::attacks::rank_order(&neg_dist)[1]] += 1;
    }
    // fall back to the nearest other centroid when the class has no samples
    if votes.iter().all(|&v| v == 0) {
        let c0 = &centroids[true_class];
        let neg_dist: Vec<f64> = centroids
            .iter()
            .map(|c| -c.iter().zip(c0).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .collect();
        return Ok(crate::attacks::rank_order(&neg_dist)[1]);
    }
    Ok(argmax_usize(&votes))
}

fn argmax_usize(v: &[usize]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching unit eigenvectors.
pub fn symmetric_eigen(matrix: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order
        .iter()
        .map(|&i| (0..n).map(|k| v[k][i]).collect())
        .collect();
    (values, vectors)
}

/// Mean-centred projection onto the top `dims` principal directions.
///
/// Components are ordered by descending variance and each direction is signed
/// so its largest-magnitude loading is positive. Directions with negligible
/// variance (below `1e-12` of the leading one) project to zero.
pub fn pca_project(vectors: &[Vec<f64>], dims: usize) -> Result<Vec<Vec<f64>>> {
    let m = vectors.len();
    if m < 2 {
        return Err(FdError::usage(format!("PCA needs at least 2 vectors, got {m}")));
    }
    let d = vectors[0].len();
    if vectors.iter().any(|v| v.len() != d) {
        return Err(FdError::usage("PCA inputs must have equal length"));
    }
    if d < dims {
        return Err(FdError::usage(format!(
            "PCA input length {d} is below the {dims} requested components"
        )));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| vectors.iter().map(|v| v[j]).sum::<f64>() / m as f64)
        .collect();
    let centred: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(a, b)| a - b).collect())
        .collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    // Work in the smaller of the two spaces; both share their non-zero spectrum.
    let (values, directions): (Vec<f64>, Vec<Vec<f64>>) = if m <= d {
        let gram: Vec<Vec<f64>> = centred
            .iter()
            .map(|a| centred.iter().map(|b| dot(a, b)).collect())
            .collect();
        let (vals, vecs) = symmetric_eigen(&gram);
        let dirs = vecs
            .iter()
            .map(|u| {
                let mut v = vec![0.0; d];
                for (coef, row) in u.iter().zip(&centred) {
                    for (acc, x) in v.iter_mut().zip(row) {
                        *acc += coef * x;
                    }
                }
                let norm = dot(&v, &v).sqrt();
                if norm > 0.0 {
                    v.iter_mut().for_each(|x| *x /= norm);
                }
                v
            })
            .collect();
        (vals, dirs)
    } else {
        let cov: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| centred.iter().map(|r| r[i] * r[j]).sum::<f64>())
                    .collect()
            })
            .collect();
        symmetric_eigen(&cov)
    };

    let leading = values.first().copied().unwrap_or(0.0).max(0.0);
    let mut out = vec![vec![0.0; dims]; m];
    for (c, (lambda, dir)) in values.iter().zip(&directions).take(dims).enumerate() {
        if leading == 0.0 || *lambda <= 1e-12 * leading {
            continue;
        }
        let mut dir = dir.clone();
        let pivot = argmax(&dir.iter().map(|x| x.abs()).collect::<Vec<_>>());
        if dir[pivot] < 0.0 {
            dir.iter_mut().for_each(|x| *x = -*x);
        }
        for (point, row) in out.iter_mut().zip(&centred) {
            point[c] = dot(row, &dir);
        }
    }
    Ok(out)
}

/// Metrics gathered after one communication round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    pub per_client_acc: Vec<f64>,
    pub malicious: Vec<bool>,
    pub tol_avg_acc: f64,
    pub vctm_avg_acc: f64,
    /// Summed over all clients' predictions on the shared test set.
    pub confusion: ConfusionMatrix,
    pub misdirection_count: u64,
}
