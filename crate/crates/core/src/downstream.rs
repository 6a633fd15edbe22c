//! k-NN classification on embeddings and leave-one-out bandwidth selection.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::kernels::{col, KernelFamily};
use crate::par::{self, Execution};

pub const DEFAULT_K: usize = 3;

/// Majority-vote k-NN with Euclidean distance.
///
/// Distance ties go to the lower stored index; vote ties go to the label
/// that appears first in the distance-sorted neighbor list.
#[derive(Debug, Clone)]
pub struct KnnClassifier {
    points: DMatrix<f64>,
    labels: Vec<usize>,
    k: usize,
}

impl KnnClassifier {
    pub fn new(points: DMatrix<f64>, labels: Vec<usize>, k: usize) -> Result<Self> {
        if points.ncols() != labels.len() {
            return input(format!("{} points but {} labels", points.ncols(), labels.len()));
        }
        if k == 0 || (k > labels.len() && !labels.is_empty()) {
            return input(format!("k must satisfy 1 <= k <= m = {}, got {k}", labels.len()));
        }
        Ok(Self { points, labels, k })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn predict(&self, query: &[f64]) -> Result<usize> {
        if self.labels.is_empty() {
            return Err(Error::State("classifier has no stored points".into()));
        }
        if query.len() != self.points.nrows() {
            return input(format!("expected a {}-vector, got {}", self.points.nrows(), query.len()));
        }
        let mut order: Vec<(f64, usize)> = (0..self.len())
            .map(|j| {
                let d: f64 = col(&self.points, j).iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
                (d, j)
            })
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let neighbors = &order[..self.k];
        let mut counts: Vec<(usize, usize, usize)> = Vec::new(); // (label, votes, first rank)
        for (rank, &(_, j)) in neighbors.iter().enumerate() {
            let l = self.labels[j];
            match counts.iter_mut().find(|c| c.0 == l) {
                Some(c) => c.1 += 1,
                None => counts.push((l, 1, rank)),
            }
        }
        let best = counts.iter().max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2))).unwrap();
        Ok(best.0)
    }

    /// Predicts every column of `queries`.
    pub fn predict_batch(&self, queries: &DMatrix<f64>) -> Result<Vec<usize>> {
        (0..queries.ncols()).map(|j| self.predict(col(queries, j))).collect()
    }
}

/// Fraction of matching labels.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return input(format!("{} predictions for {} labels", predicted.len(), truth.len()));
    }
    if truth.is_empty() {
        return input("accuracy of an empty set");
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Test accuracy of `clf` on labeled queries.
pub fn classifier_accuracy(clf: &KnnClassifier, queries: &DMatrix<f64>, truth: &[usize]) -> Result<f64> {
    accuracy(&clf.predict_batch(queries)?, truth)
}

/// Leave-one-out k-NN accuracy over labeled points; `k` is capped at `m − 1`.
pub fn loo_accuracy(points: &DMatrix<f64>, labels: &[usize], k: usize) -> Result<f64> {
    let m = labels.len();
    if m < 2 || points.ncols() != m {
        return input("leave-one-out needs at least two aligned labeled points");
    }
    let k = k.min(m - 1);
    let mut hits = 0;
    for i in 0..m {
        let keep: Vec<usize> = (0..m).filter(|&j| j != i).collect();
        let clf = KnnClassifier::new(crate::datasets::select_columns(points, &keep), keep.iter().map(|&j| labels[j]).collect(), k)?;
        if clf.predict(col(points, i))? == labels[i] {
            hits += 1;
        }
    }
    Ok(hits as f64 / m as f64)
}

/// Log-spaced bandwidth values, endpoints included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthGrid {
    pub values: Vec<f64>,
}

impl BandwidthGrid {
    pub fn log_spaced(min: f64, max: f64, steps: usize) -> Result<Self> {
        if !(min > 0.0 && max >= min) || steps == 0 {
            return input(format!("invalid grid [{min}, {max}] with {steps} steps"));
        }
        if steps == 1 {
            return Ok(Self { values: vec![min] });
        }
        let (a, b) = (min.log10(), max.log10());
        let mut values: Vec<f64> =
            (0..steps).map(|i| 10f64.powf(a + (b - a) * i as f64 / (steps - 1) as f64)).collect();
        values[0] = min;
        values[steps - 1] = max;
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl Default for BandwidthGrid {
    /// 15 values between 0.01 and 100.
    fn default() -> Self {
        Self::log_spaced(0.01, 100.0, 15).expect("static grid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthChoice {
    /// `None` for bandwidth-free kernels.
    pub chosen: Option<f64>,
    /// LOO accuracy per grid position; `-1` marks a failed fit.
    pub scores: Vec<f64>,
}

impl BandwidthChoice {
    pub fn not_applicable() -> Self {
        Self { chosen: None, scores: Vec::new() }
    }
}

/// Picks the bandwidth whose representation gives the best leave-one-out
/// k-NN accuracy on the labeled points (ties go to the smaller value).
///
/// `embed_labeled(γ)` must train the representation with bandwidth `γ`
/// and return the `h × m` embeddings of the labeled points.
pub fn loo_select_bandwidth<F>(
    family: KernelFamily,
    grid: &BandwidthGrid,
    labels: &[usize],
    k: usize,
    exec: Execution,
    embed_labeled: F,
) -> Result<BandwidthChoice>
where
    F: Fn(f64) -> Result<DMatrix<f64>> + Sync + Send,
{
    if !family.has_bandwidth() {
        return Ok(BandwidthChoice::not_applicable());
    }
    if labels.len() < 2 {
        return input("bandwidth selection needs at least two labeled points");
    }
    if grid.is_empty() {
        return input("empty bandwidth grid");
    }
    let scores = par::map_slice(exec, &grid.values, |&gamma| {
        embed_labeled(gamma).and_then(|z| loo_accuracy(&z, labels, k)).unwrap_or(-1.0)
    });
    if scores.iter().all(|&s| s < 0.0) {
        return Err(Error::Selection("every grid value failed to fit".into()));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] || (s == scores[best] && grid.values[i] < grid.values[best]) {
            best = i;
        }
    }
    Ok(BandwidthChoice { chosen: Some(grid.values[best]), scores })
}
