//! Synthetic generators, CSV ingestion, stratified splits, contrastive
//! triplets and de-noising corruption. All randomness flows through explicit
//! seeds.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::kernels::col;

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed and a purpose tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Samples as columns of a `d × n` matrix, with optional class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub x: DMatrix<f64>,
    pub y: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, x: DMatrix<f64>, y: Option<Vec<usize>>) -> Result<Self> {
        let ds = Dataset { name: name.into(), x, y };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.iter().any(|v| !v.is_finite()) {
            return input(format!("dataset {} has non-finite entries", self.name));
        }
        if let Some(y) = &self.y {
            if y.len() != self.x.ncols() {
                return input(format!("{} labels for {} samples", y.len(), self.x.ncols()));
            }
            let c = self.n_classes();
            let mut seen = vec![false; c];
            for &l in y {
                seen[l] = true;
            }
            if seen.iter().any(|s| !s) {
                return input("labels must cover 0..C-1 with every class nonempty");
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }

    pub fn n_classes(&self) -> usize {
        self.y.as_ref().map_or(0, |y| y.iter().max().map_or(0, |m| m + 1))
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.y.as_deref().ok_or_else(|| Error::Input(format!("dataset {} has no labels", self.name)))
    }

    /// Columns at `idx`, in that order.
    pub fn columns(&self, idx: &[usize]) -> DMatrix<f64> {
        select_columns(&self.x, idx)
    }
}

pub fn select_columns(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let d = x.nrows();
    DMatrix::from_iterator(d, idx.len(), idx.iter().flat_map(|&j| col(x, j).iter().copied()))
}

fn add_noise(x: &mut DMatrix<f64>, sd: f64, rng: &mut ChaCha8Rng) {
    if sd == 0.0 {
        return;
    }
    for v in x.iter_mut() {
        let e: f64 = rng.sample(StandardNormal);
        *v += sd * e;
    }
}

/// Two concentric circles: `n/2` points on the unit circle (label 0) and
/// `n/2` on a circle of radius `factor` (label 1).
pub fn make_circles(n: usize, factor: f64, noise_sd: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || n % 2 != 0 {
        return input(format!("make_circles needs an even, positive n (got {n})"));
    }
    if !(factor > 0.0 && factor < 1.0) {
        return input(format!("factor must be in (0, 1), got {factor}"));
    }
    if !(noise_sd >= 0.0) {
        return input("noise_sd must be >= 0");
    }
    let mut rng = rng(seed);
    let half = n / 2;
    let mut points: Vec<(f64, f64, usize)> = Vec::with_capacity(n);
    for (radius, label) in [(1.0, 0usize), (factor, 1)] {
        for k in 0..half {
            let t = 2.0 * PI * k as f64 / half as f64;
            points.push((radius * t.cos(), radius * t.sin(), label));
        }
    }
    points.shuffle(&mut rng);
    let mut x = DMatrix::from_iterator(2, n, points.iter().flat_map(|p| [p.0, p.1]));
    add_noise(&mut x, noise_sd, &mut rng);
    Dataset::new("circles", x, Some(points.iter().map(|p| p.2).collect()))
}

/// Two interleaving half circles.
pub fn make_moons(n: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return input("make_moons needs n >= 2");
    }
    if !(noise_sd >= 0.0) {
        return input("noise_sd must be >= 0");
    }
    let mut rng = rng(seed);
    let n_out = n / 2;
    let n_in = n - n_out;
    let grid = |m: usize, k: usize| if m > 1 { PI * k as f64 / (m - 1) as f64 } else { 0.0 };
    let mut points: Vec<(f64, f64, usize)> = Vec::with_capacity(n);
    for k in 0..n_out {
        let t = grid(n_out, k);
        points.push((t.cos(), t.sin(), 0));
    }
    for k in 0..n_in {
        let t = grid(n_in, k);
        points.push((1.0 - t.cos(), 0.5 - t.sin(), 1));
    }
    points.shuffle(&mut rng);
    let mut x = DMatrix::from_iterator(2, n, points.iter().flat_map(|p| [p.0, p.1]));
    add_noise(&mut x, noise_sd, &mut rng);
    Dataset::new("moons", x, Some(points.iter().map(|p| p.2).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobsParams {
    pub n_classes: usize,
    pub dim: usize,
    pub cluster_sd: f64,
    /// Centers are drawn uniformly from `[-box, box]^dim` unless given explicitly.
    pub center_box: f64,
    pub centers: Option<Vec<Vec<f64>>>,
}

impl Default for BlobsParams {
    fn default() -> Self {
        Self { n_classes: 3, dim: 2, cluster_sd: 1.0, center_box: 10.0, centers: None }
    }
}

fn gaussian_clusters(
    name: &str,
    n: usize,
    centers: &[Vec<f64>],
    sd: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset> {
    let c = centers.len();
    let d = centers[0].len();
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    let mut x = DMatrix::from_iterator(d, n, labels.iter().flat_map(|&l| centers[l].iter().copied()));
    add_noise(&mut x, sd, rng);
    // shuffle sample order so classes are interleaved randomly
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let x = select_columns(&x, &order);
    Dataset::new(name, x, Some(order.iter().map(|&i| labels[i]).collect()))
}

/// Isotropic Gaussian clusters, samples assigned to classes round-robin.
pub fn make_blobs(n: usize, params: &BlobsParams, seed: u64) -> Result<Dataset> {
    let mut rng = rng(seed);
    let centers = match &params.centers {
        Some(c) => {
            if c.is_empty() || c.iter().any(|v| v.len() != c[0].len() || v.is_empty()) {
                return input("blob centers must be nonempty and share a dimension");
            }
            c.clone()
        }
        None => {
            if params.dim == 0 {
                return input("blobs need dim >= 1");
            }
            (0..params.n_classes)
                .map(|_| (0..params.dim).map(|_| rng.random_range(-params.center_box..=params.center_box)).collect())
                .collect()
        }
    };
    if centers.is_empty() || n < centers.len() {
        return input(format!("invalid class count {} for n = {n}", centers.len()));
    }
    if !(params.cluster_sd >= 0.0) {
        return input("cluster_sd must be >= 0");
    }
    gaussian_clusters("blobs", n, &centers, params.cluster_sd, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubesParams {
    pub dim: usize,
    pub n_classes: usize,
    pub spread: f64,
}

impl Default for CubesParams {
    fn default() -> Self {
        Self { dim: 13, n_classes: 4, spread: 0.3 }
    }
}

/// Gaussian clusters centered at distinct, seed-chosen vertices of the unit hypercube.
pub fn make_cubes(n: usize, params: &CubesParams, seed: u64) -> Result<Dataset> {
    let CubesParams { dim, n_classes, spread } = *params;
    if dim == 0 {
        return input("cubes need dim >= 1");
    }
    let vertices = if dim >= 63 { u64::MAX } else { 1u64 << dim };
    if n_classes == 0 || n < n_classes || (n_classes as u64) > vertices {
        return input(format!("invalid class count {n_classes} for n = {n}, dim = {dim}"));
    }
    if !(spread >= 0.0) {
        return input("spread must be >= 0");
    }
    let mut rng = rng(seed);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
    while centers.len() < n_classes {
        let v: Vec<f64> = (0..dim).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
        if !centers.contains(&v) {
            centers.push(v);
        }
    }
    gaussian_clusters("cubes", n, &centers, spread, &mut rng)
}

/// Default synthetic noise level for circles, which the reference generator leaves unset.
pub const CIRCLES_NOISE: f64 = 0.05;
pub const MOONS_NOISE: f64 = 0.1;

/// Named synthetic dataset with default parameters.
pub fn generate(name: &str, n: usize, seed: u64) -> Result<Dataset> {
    match name {
        "circles" => make_circles(n, 0.6, CIRCLES_NOISE, seed),
        "moons" => make_moons(n, MOONS_NOISE, seed),
        "blobs" => make_blobs(n, &BlobsParams::default(), seed),
        "cubes" => make_cubes(n, &CubesParams::default(), seed),
        other => input(format!("unknown dataset {other:?} (expected circles, moons, blobs or cubes)")),
    }
}

pub const SYNTHETIC: [&str; 4] = ["circles", "moons", "blobs", "cubes"];

/// Which CSV column holds the labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

/// Loads a numeric CSV, mapping labels to `0..C-1` in first-appearance order
/// and standardizing every feature over all rows.
///
/// Row and column positions in errors are 1-based and count the header row.
pub fn load_csv(path: &Path, label: Option<&LabelColumn>, has_header: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(has_header).from_path(path)?;
    let label_idx = match label {
        None => None,
        Some(LabelColumn::Index(i)) => Some(*i),
        Some(LabelColumn::Name(name)) => {
            if !has_header {
                return input("label column given by name but the file has no header");
            }
            let headers = reader.headers()?;
            Some(
                headers
                    .iter()
                    .position(|h| h.trim() == name)
                    .ok_or_else(|| Error::Input(format!("label column {name:?} not found")))?,
            )
        }
    };
    let row_offset = if has_header { 2 } else { 1 };
    let mut features: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut label_ids: HashMap<String, usize> = HashMap::new();
    let mut width = None;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + row_offset;
        if let Some(li) = label_idx {
            if li >= record.len() {
                return Err(Error::Load { row, column: li + 1, message: "label column out of range".into() });
            }
        }
        let mut feats = Vec::with_capacity(record.len());
        for (c, cell) in record.iter().enumerate() {
            if Some(c) == label_idx {
                let next = label_ids.len();
                labels.push(*label_ids.entry(cell.trim().to_string()).or_insert(next));
                continue;
            }
            let v: f64 = cell.trim().parse().map_err(|_| Error::Load {
                row,
                column: c + 1,
                message: format!("cannot parse {cell:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Load { row, column: c + 1, message: "non-finite value".into() });
            }
            feats.push(v);
        }
        match width {
            None => width = Some(feats.len()),
            Some(w) if w != feats.len() => {
                return Err(Error::Load { row, column: feats.len(), message: format!("expected {w} features") })
            }
            _ => {}
        }
        features.push(feats);
    }
    let d = width.unwrap_or(0);
    if features.is_empty() || d == 0 {
        return input(format!("{} contains no feature data", path.display()));
    }
    let mut x = DMatrix::from_iterator(d, features.len(), features.into_iter().flatten());
    standardize(&mut x);
    let name = path.file_stem().map_or("csv".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, x, label_idx.map(|_| labels))
}

/// Zero mean, unit (population) variance per feature; constant features get sd 1.
pub fn standardize(x: &mut DMatrix<f64>) {
    let n = x.ncols() as f64;
    for mut row in x.row_iter_mut() {
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        let sd = if sd > 1e-12 { sd } else { 1.0 };
        for v in row.iter_mut() {
            *v = (*v - mean) / sd;
        }
    }
}

/// Writes a dataset as CSV with a header `x0,…,x{d-1}[,label]`.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..ds.dim()).map(|i| format!("x{i}")).collect();
    if ds.y.is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for j in 0..ds.len() {
        let mut rec: Vec<String> = col(&ds.x, j).iter().map(|v| v.to_string()).collect();
        if let Some(y) = &ds.y {
            rec.push(y[j].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Disjoint unlabeled / labeled / test index sets covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub unlabeled: Vec<usize>,
    pub labeled: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl SplitIndices {
    /// Indices the representation may be trained on (unlabeled then labeled).
    pub fn train(&self) -> Vec<usize> {
        self.unlabeled.iter().chain(&self.labeled).copied().collect()
    }
}

pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.50, 0.05, 0.45);

/// Seeded split; the labeled part is stratified with at least one sample per class.
pub fn split(ds: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<SplitIndices> {
    let (fu, fl, ft) = fractions;
    if !(fu > 0.0 && fl > 0.0 && ft > 0.0) || ((fu + fl + ft) - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!("fractions must be positive and sum to 1, got {fractions:?}")));
    }
    let n = ds.len();
    let n_unlab = (fu * n as f64).round() as usize;
    let n_lab = (fl * n as f64).round() as usize;
    if n_unlab + n_lab >= n || n_lab == 0 || n_unlab == 0 {
        return Err(Error::Split(format!("n = {n} is too small for fractions {fractions:?}")));
    }
    let mut rng = rng(seed);
    let mut labeled = match &ds.y {
        None => Vec::new(),
        Some(y) => stratified_pick(y, ds.n_classes(), n_lab, &mut rng)?,
    };
    let mut taken = vec![false; n];
    if ds.y.is_none() {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        labeled = all[..n_lab].to_vec();
    }
    for &i in &labeled {
        taken[i] = true;
    }
    let mut rest: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
    rest.shuffle(&mut rng);
    let test = rest.split_off(n_unlab);
    Ok(SplitIndices { unlabeled: rest, labeled, test, seed })
}

fn stratified_pick(y: &[usize], classes: usize, n_lab: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if n_lab < classes {
        return Err(Error::Split(format!("{n_lab} labeled samples cannot cover {classes} classes")));
    }
    let n = y.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in y.iter().enumerate() {
        members[l].push(i);
    }
    // Largest-remainder allocation with a floor of one per class.
    let quotas: Vec<f64> = members.iter().map(|m| n_lab as f64 * m.len() as f64 / n as f64).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| (q.floor() as usize).max(1)).collect();
    let mut total: usize = alloc.iter().sum();
    let mut by_remainder: Vec<usize> = (0..classes).collect();
    by_remainder.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())));
    let mut cursor = 0;
    while total < n_lab {
        let c = by_remainder[cursor % classes];
        if alloc[c] < members[c].len() {
            alloc[c] += 1;
            total += 1;
        }
        cursor += 1;
        if cursor > classes * (n_lab + 1) {
            return Err(Error::Split("cannot place labeled samples".into()));
        }
    }
    while total > n_lab {
        // floors of one pushed us over; trim the largest allocations
        let c = (0..classes).max_by_key(|&c| (alloc[c], std::cmp::Reverse(c))).unwrap();
        if alloc[c] <= 1 {
            return Err(Error::Split("cannot place labeled samples".into()));
        }
        alloc[c] -= 1;
        total -= 1;
    }
    let mut labeled = Vec::with_capacity(n_lab);
    for (c, m) in members.iter_mut().enumerate() {
        if alloc[c] > m.len() {
            return Err(Error::Split(format!("class {c} has {} samples, needs {}", m.len(), alloc[c])));
        }
        m.shuffle(rng);
        labeled.extend_from_slice(&m[..alloc[c]]);
    }
    labeled.sort_unstable();
    labeled.shuffle(rng);
    Ok(labeled)
}

/// Column-aligned anchors, positives and negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletSet {
    pub anchors: DMatrix<f64>,
    pub positives: DMatrix<f64>,
    pub negatives: DMatrix<f64>,
    /// Training column each negative was drawn from.
    pub negative_source: Vec<usize>,
}

impl TripletSet {
    pub fn new(anchors: DMatrix<f64>, positives: DMatrix<f64>, negatives: DMatrix<f64>) -> Result<Self> {
        if anchors.shape() != positives.shape() || anchors.shape() != negatives.shape() {
            return input("anchors, positives and negatives must have equal shapes");
        }
        Ok(Self { negative_source: Vec::new(), anchors, positives, negatives })
    }

    pub fn len(&self) -> usize {
        self.anchors.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.ncols() == 0
    }

    pub fn dim(&self) -> usize {
        self.anchors.nrows()
    }

    /// `[X, X⁺, X⁻]` as one `d × 3n` matrix.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (d, n) = self.anchors.shape();
        let mut p = DMatrix::zeros(d, 3 * n);
        p.columns_mut(0, n).copy_from(&self.anchors);
        p.columns_mut(n, n).copy_from(&self.positives);
        p.columns_mut(2 * n, n).copy_from(&self.negatives);
        p
    }
}

/// Anchor `i` is training column `i`, its positive adds Gaussian noise with
/// per-feature sd `aug_sd · sd(feature)`, and its negative is another training
/// column drawn uniformly.
pub fn make_triplets(x_train: &DMatrix<f64>, aug_sd: f64, seed: u64) -> Result<TripletSet> {
    let (d, m) = x_train.shape();
    if m < 2 {
        return input("need at least two training samples to draw negatives");
    }
    if !(aug_sd >= 0.0) {
        return input("aug_sd must be >= 0");
    }
    let mut rng = rng(seed);
    let feature_sd: Vec<f64> = x_train
        .row_iter()
        .map(|r| {
            let mean = r.sum() / m as f64;
            (r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64).sqrt()
        })
        .collect();
    let mut positives = x_train.clone();
    if aug_sd > 0.0 {
        for j in 0..m {
            for i in 0..d {
                let e: f64 = rng.sample(StandardNormal);
                positives[(i, j)] += aug_sd * feature_sd[i] * e;
            }
        }
    }
    let negative_source: Vec<usize> = (0..m)
        .map(|i| {
            let j = rng.random_range(0..m - 1);
            if j >= i {
                j + 1
            } else {
                j
            }
        })
        .collect();
    let negatives = select_columns(x_train, &negative_source);
    Ok(TripletSet { anchors: x_train.clone(), positives, negatives, negative_source })
}

pub const DEFAULT_NOISE_SD: f64 = 0.1;

/// `X + ε` with i.i.d. `ε ~ N(0, noise_sd²)`.
pub fn corrupt(x: &DMatrix<f64>, noise_sd: f64, seed: u64) -> Result<DMatrix<f64>> {
    if !(noise_sd >= 0.0) {
        return input("noise_sd must be >= 0");
    }
    let mut out = x.clone();
    if noise_sd > 0.0 {
        let normal = Normal::new(0.0, noise_sd).map_err(|e| Error::Input(e.to_string()))?;
        let mut rng = rng(seed);
        for v in out.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(out)
}
