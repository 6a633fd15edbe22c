//! End-to-end protocol: split, build triplets, select the bandwidth, fit,
//! embed, score with k-NN, aggregate over seeds and write CSV tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;

use crate::config::{ExperimentConfig, KernelTemplate, Method};
use crate::datasets::{corrupt, derive_seed, make_triplets, split, Dataset, TripletSet};
use crate::diagnostics::{bound_report, BoundReport};
use crate::downstream::{classifier_accuracy, loo_select_bandwidth, BandwidthGrid, KnnClassifier};
use crate::error::{Error, Result};
use crate::kernel_ae::fit_ae;
use crate::kernels::{KernelFamily, KernelSpec};
use crate::kpca::fit_kpca;
use crate::model::{write_atomic, Representation};
use crate::par::{self, Execution};
use crate::simple_contrastive::fit_simple;
use crate::spectral_contrastive::fit_spectral;

pub const RESULT_HEADER: [&str; 12] = [
    "dataset",
    "method",
    "kernel",
    "bandwidth",
    "seed",
    "metric_name",
    "metric_value",
    "fit_ms",
    "alpha",
    "kappa",
    "gamma",
    "w_norm_sq",
];
pub const AGGREGATE_HEADER: [&str; 7] = ["dataset", "method", "kernel", "metric_name", "mean", "sd", "n_seeds"];
pub const RESULTS_FILE: &str = "results.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
/// `kernel` column value for the raw-feature baseline.
pub const NO_KERNEL: &str = "none";
/// Bandwidth gamma of the decoder paired with a relu_ntk encoder.
pub const RELU_DECODER_GAMMA: f64 = 1.0;

const TAG_SPLIT: u64 = 1;
const TAG_TRIPLETS: u64 = 2;
const TAG_TRAIN_NOISE: u64 = 3;
const TAG_TEST_NOISE: u64 = 4;
const TAG_INIT: u64 = 5;

/// One row of the result table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub dataset: String,
    pub method: String,
    pub kernel: String,
    /// `None` prints as `n/a`.
    pub bandwidth: Option<f64>,
    pub seed: u64,
    /// `accuracy`, `mse`, `mse_identity`, or `failed: <reason>`.
    pub metric_name: String,
    pub metric_value: Option<f64>,
    pub fit_ms: f64,
    pub alpha: Option<f64>,
    pub kappa: Option<f64>,
    pub gamma: Option<f64>,
    pub w_norm_sq: Option<f64>,
}

impl ResultRecord {
    pub fn is_failed(&self) -> bool {
        self.metric_value.is_none()
    }

    pub fn to_row(&self) -> [String; 12] {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            self.dataset.clone(),
            self.method.clone(),
            self.kernel.clone(),
            self.bandwidth.map(|b| b.to_string()).unwrap_or_else(|| "n/a".into()),
            self.seed.to_string(),
            self.metric_name.clone(),
            opt(self.metric_value),
            format!("{:.3}", self.fit_ms),
            opt(self.alpha),
            opt(self.kappa),
            opt(self.gamma),
            opt(self.w_norm_sq),
        ]
    }
}

/// Mean and sample standard deviation of one metric over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRecord {
    pub dataset: String,
    pub method: String,
    pub kernel: String,
    pub metric_name: String,
    pub mean: f64,
    pub sd: f64,
    pub n_seeds: usize,
}

impl AggregateRecord {
    pub fn to_row(&self) -> [String; 7] {
        [
            self.dataset.clone(),
            self.method.clone(),
            self.kernel.clone(),
            self.metric_name.clone(),
            self.mean.to_string(),
            self.sd.to_string(),
            self.n_seeds.to_string(),
        ]
    }
}

/// Groups successful rows by (dataset, method, kernel, metric) in first-seen order.
pub fn aggregate(records: &[ResultRecord]) -> Vec<AggregateRecord> {
    let mut order: Vec<(String, String, String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String, String, String), Vec<f64>> = BTreeMap::new();
    for r in records {
        let Some(v) = r.metric_value else { continue };
        let key = (r.dataset.clone(), r.method.clone(), r.kernel.clone(), r.metric_name.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(v);
    }
    order
        .into_iter()
        .map(|key| {
            let vals = &groups[&key];
            let n = vals.len();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let sd = if n > 1 {
                (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            let (dataset, method, kernel, metric_name) = key;
            AggregateRecord { dataset, method, kernel, metric_name, mean, sd, n_seeds: n }
        })
        .collect()
}

fn write_table<const N: usize>(path: &Path, header: [&str; N], rows: impl Iterator<Item = [String; N]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

pub fn write_results(path: &Path, records: &[ResultRecord]) -> Result<()> {
    write_table(path, RESULT_HEADER, records.iter().map(ResultRecord::to_row))
}

pub fn write_aggregates(path: &Path, rows: &[AggregateRecord]) -> Result<()> {
    write_table(path, AGGREGATE_HEADER, rows.iter().map(AggregateRecord::to_row))
}

/// Training-side data for one seed. Test data is kept apart in [`TestSet`].
#[derive(Debug, Clone)]
pub struct TrainView {
    /// Unlabeled then labeled columns.
    pub x: DMatrix<f64>,
    /// Encoder inputs for the de-noising auto-encoder.
    pub x_noisy: DMatrix<f64>,
    pub triplets: TripletSet,
    pub x_labeled: DMatrix<f64>,
    pub y_labeled: Vec<usize>,
}

/// Held-out points, only opened by final scoring.
#[derive(Debug, Clone)]
pub struct TestSet {
    x: DMatrix<f64>,
    y: Vec<usize>,
    noisy: DMatrix<f64>,
}

impl TestSet {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Splits and prepares one seed; the split sets are asserted disjoint.
pub fn prepare_seed(ds: &Dataset, cfg: &ExperimentConfig, seed: u64) -> Result<(TrainView, TestSet)> {
    let labels = ds.labels()?;
    let s = split(ds, cfg.split.as_tuple(), derive_seed(seed, TAG_SPLIT))?;
    let mut seen = vec![false; ds.len()];
    for &i in s.unlabeled.iter().chain(&s.labeled).chain(&s.test) {
        assert!(!seen[i], "split index {i} appears twice");
        seen[i] = true;
    }
    let train_idx = s.train();
    let x = ds.columns(&train_idx);
    let triplets = make_triplets(&x, cfg.aug_sd, derive_seed(seed, TAG_TRIPLETS))?;
    let x_noisy = corrupt(&x, cfg.noise_sd, derive_seed(seed, TAG_TRAIN_NOISE))?;
    let train = TrainView {
        x_labeled: ds.columns(&s.labeled),
        y_labeled: s.labeled.iter().map(|&i| labels[i]).collect(),
        x,
        x_noisy,
        triplets,
    };
    let x_test = ds.columns(&s.test);
    let test = TestSet {
        noisy: corrupt(&x_test, cfg.noise_sd, derive_seed(seed, TAG_TEST_NOISE))?,
        x: x_test,
        y: s.test.iter().map(|&i| labels[i]).collect(),
    };
    Ok((train, test))
}

/// Decoder kernel paired with an encoder kernel in the auto-encoder.
pub fn decoder_spec(enc: &KernelSpec) -> KernelSpec {
    match enc.family {
        KernelFamily::ReluNtk => KernelSpec::gaussian(RELU_DECODER_GAMMA),
        _ => *enc,
    }
}

/// Fits `method` with kernel `spec` on the training view.
pub fn fit_method(method: Method, spec: &KernelSpec, cfg: &ExperimentConfig, train: &TrainView, seed: u64) -> Result<Representation> {
    let init_seed = derive_seed(seed, TAG_INIT);
    Ok(match method {
        Method::Raw => Representation::Raw,
        Method::Kpca => Representation::Kpca(fit_kpca(&train.x, spec, cfg.h)?),
        Method::Simple => Representation::Simple(fit_simple(&train.triplets, spec, cfg.h, cfg.simple.jitter)?),
        Method::Spectral => {
            Representation::Spectral(fit_spectral(&train.triplets, spec, &cfg.spectral.to_config(cfg.h), init_seed)?)
        }
        Method::Ae | Method::AeDenoise => {
            let noisy = (method == Method::AeDenoise).then_some(&train.x_noisy);
            Representation::Ae(fit_ae(&train.x, noisy, spec, &decoder_spec(spec), &cfg.ae.to_config(cfg.h), init_seed)?)
        }
    })
}

/// A (method, kernel, seed) unit of work.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub method: Method,
    /// `None` for the raw baseline.
    pub kernel: Option<KernelTemplate>,
    pub seed: u64,
}

impl Cell {
    pub fn kernel_label(&self) -> String {
        self.kernel.map(|k| k.label()).unwrap_or_else(|| NO_KERNEL.into())
    }
}

/// Cells in output order: seed, then method, then kernel.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        for &method in &cfg.methods {
            if method.uses_kernel() {
                out.extend(cfg.kernels.iter().map(|&k| Cell { method, kernel: Some(k), seed }));
            } else {
                out.push(Cell { method, kernel: None, seed });
            }
        }
    }
    out
}

/// What the progress callback sees when a cell finishes.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub cell: Cell,
    pub records: Vec<ResultRecord>,
}

impl CellOutcome {
    /// One-line summary for logs.
    pub fn summary(&self) -> String {
        let head = format!("{} {} seed={}", self.cell.method.name(), self.cell.kernel_label(), self.cell.seed);
        match self.records.first() {
            Some(r) if r.is_failed() => format!("{head}: {}", r.metric_name),
            Some(r) => {
                let metrics: Vec<String> =
                    self.records.iter().map(|r| format!("{}={:.4}", r.metric_name, r.metric_value.unwrap_or(f64::NAN))).collect();
                let bw = r.bandwidth.map(|b| format!(" bandwidth={b:.4}")).unwrap_or_default();
                format!("{head}{bw} {} fit={:.1}ms", metrics.join(" "), r.fit_ms)
            }
            None => head,
        }
    }
}

struct Scored {
    bandwidth: Option<f64>,
    fit_ms: f64,
    metrics: Vec<(&'static str, f64)>,
    report: Option<BoundReport>,
}

fn execution(cfg: &ExperimentConfig) -> Execution {
    if cfg.parallel {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

fn mean_sq_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm_squared() / a.ncols() as f64
}

fn run_cell(cell: &Cell, cfg: &ExperimentConfig, grid: &BandwidthGrid, train: &TrainView, test: &TestSet) -> Result<Scored> {
    let m = train.y_labeled.len();
    let k = cfg.k.min(m);
    let template = cell.kernel.unwrap_or(KernelTemplate::new(KernelFamily::Linear));
    let bandwidth = match (cell.kernel, template.gamma) {
        (None, _) => None,
        (Some(_), Some(g)) if template.family.has_bandwidth() => Some(g),
        (Some(_), _) => {
            loo_select_bandwidth(template.family, grid, &train.y_labeled, k, execution(cfg), |gamma| {
                fit_method(cell.method, &template.spec(gamma), cfg, train, cell.seed)?.embed_batch(&train.x_labeled)
            })?
            .chosen
        }
    };
    let spec = template.spec(bandwidth.unwrap_or(1.0));

    let start = Instant::now();
    let rep = fit_method(cell.method, &spec, cfg, train, cell.seed)?;
    let fit_ms = start.elapsed().as_secs_f64() * 1e3;

    let clf = KnnClassifier::new(rep.embed_batch(&train.x_labeled)?, train.y_labeled.clone(), k)?;
    let triplets = matches!(cell.method, Method::Simple | Method::Spectral).then_some(&train.triplets);
    let enc_inputs = if cell.method == Method::AeDenoise { &train.x_noisy } else { &train.x };
    let report = bound_report(&rep, triplets, enc_inputs, cfg.h)?;

    // held-out data is read from here on only
    let mut metrics = vec![("accuracy", classifier_accuracy(&clf, &rep.embed_batch(&test.x)?, &test.y)?)];
    if let (Method::AeDenoise, Representation::Ae(ae)) = (cell.method, &rep) {
        metrics.push(("mse", mean_sq_error(&ae.reconstruct_batch(&test.noisy)?, &test.x)));
        metrics.push(("mse_identity", mean_sq_error(&test.noisy, &test.x)));
    }
    Ok(Scored { bandwidth, fit_ms, metrics, report })
}

fn records_for(cell: &Cell, dataset: &str, result: Result<Scored>) -> Vec<ResultRecord> {
    let base = ResultRecord {
        dataset: dataset.to_string(),
        method: cell.method.name().to_string(),
        kernel: cell.kernel_label(),
        bandwidth: None,
        seed: cell.seed,
        metric_name: String::new(),
        metric_value: None,
        fit_ms: 0.0,
        alpha: None,
        kappa: None,
        gamma: None,
        w_norm_sq: None,
    };
    match result {
        Err(e) => vec![ResultRecord { metric_name: format!("failed: {e}"), ..base }],
        Ok(s) => s
            .metrics
            .iter()
            .map(|&(name, value)| ResultRecord {
                bandwidth: s.bandwidth,
                metric_name: name.to_string(),
                metric_value: Some(value),
                fit_ms: s.fit_ms,
                alpha: s.report.map(|r| r.alpha),
                kappa: s.report.map(|r| r.kappa),
                gamma: s.report.and_then(|r| r.gamma),
                w_norm_sq: s.report.and_then(|r| r.w_norm_sq).map(|w| w.total()),
                ..base.clone()
            })
            .collect(),
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<ResultRecord>,
    pub aggregates: Vec<AggregateRecord>,
}

/// Runs every cell. Method failures become `failed: ...` rows; data and
/// split problems abort the run.
pub fn run_experiment(cfg: &ExperimentConfig, progress: &(dyn Fn(&CellOutcome) + Sync)) -> Result<RunOutput> {
    cfg.validate()?;
    run_on_dataset(cfg, &cfg.dataset.load()?, progress)
}

/// Like [`run_experiment`] with an already loaded dataset in place of `cfg.dataset`.
pub fn run_on_dataset(cfg: &ExperimentConfig, ds: &Dataset, progress: &(dyn Fn(&CellOutcome) + Sync)) -> Result<RunOutput> {
    if ds.y.is_none() {
        return Err(Error::Config("dataset has no labels".into()));
    }
    let grid = cfg.grid()?;
    let dataset = ds.name.clone();
    let prepared: Vec<(TrainView, TestSet)> =
        cfg.seeds.iter().map(|&seed| prepare_seed(ds, cfg, seed)).collect::<Result<_>>()?;
    let cells = cells(cfg);
    let outcomes = par::map_slice(execution(cfg), &cells, |cell| {
        let pos = cfg.seeds.iter().position(|&s| s == cell.seed).expect("cell seed comes from the config");
        let (train, test) = &prepared[pos];
        let outcome = CellOutcome { cell: *cell, records: records_for(cell, &dataset, run_cell(cell, cfg, &grid, train, test)) };
        progress(&outcome);
        outcome
    });
    let records: Vec<ResultRecord> = outcomes.into_iter().flat_map(|o| o.records).collect();
    let aggregates = aggregate(&records);
    Ok(RunOutput { records, aggregates })
}

/// Runs and writes `results.csv` and `aggregate.csv` into `out_dir`.
pub fn run_to_dir(cfg: &ExperimentConfig, out_dir: &Path, progress: &(dyn Fn(&CellOutcome) + Sync)) -> Result<(RunOutput, PathBuf, PathBuf)> {
    let out = run_experiment(cfg, progress)?;
    std::fs::create_dir_all(out_dir)?;
    let results = out_dir.join(RESULTS_FILE);
    let aggregates = out_dir.join(AGGREGATE_FILE);
    write_results(&results, &out.records)?;
    write_aggregates(&aggregates, &out.aggregates)?;
    Ok((out, results, aggregates))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{make_blobs, BlobsParams};

    fn record(method: &str, seed: u64, value: Option<f64>) -> ResultRecord {
        ResultRecord {
            dataset: "d".into(),
            method: method.into(),
            kernel: NO_KERNEL.into(),
            bandwidth: None,
            seed,
            metric_name: if value.is_some() { "accuracy".into() } else { "failed: x".into() },
            metric_value: value,
            fit_ms: 1.0,
            alpha: None,
            kappa: None,
            gamma: None,
            w_norm_sq: None,
        }
    }

    #[test]
    fn aggregate_uses_sample_sd_and_skips_failures() {
        let rows = vec![record("raw", 1, Some(0.5)), record("raw", 2, Some(1.0)), record("raw", 3, None), record("kpca", 1, Some(0.25))];
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].method, "raw");
        assert_eq!(agg[0].n_seeds, 2);
        assert!((agg[0].mean - 0.75).abs() < 1e-15);
        assert!((agg[0].sd - (0.125f64).sqrt()).abs() < 1e-15);
        assert_eq!(agg[1].sd, 0.0);
    }

    #[test]
    fn rows_render_blank_optionals() {
        let row = record("raw", 7, Some(0.9)).to_row();
        assert_eq!(row[3], "n/a");
        assert_eq!(row[6], "0.9");
        assert_eq!(row[8], "");
    }

    #[test]
    fn cell_layout() {
        let mut cfg = ExperimentConfig::for_dataset("blobs", 60);
        cfg.methods = vec![Method::Raw, Method::Kpca];
        cfg.seeds = vec![1, 2];
        let c = cells(&cfg);
        assert_eq!(c.len(), 2 * (1 + cfg.kernels.len()));
        assert_eq!(c[0].kernel_label(), NO_KERNEL);
    }

    #[test]
    fn prepared_seed_keeps_test_apart() {
        let cfg = ExperimentConfig::for_dataset("circles", 200);
        let ds = cfg.dataset.load().unwrap();
        let (train, test) = prepare_seed(&ds, &cfg, 3).unwrap();
        assert_eq!(train.x.ncols(), 110);
        assert_eq!(train.y_labeled.len(), 10);
        assert_eq!(test.len(), 90);
        assert_eq!(train.triplets.len(), 110);
    }

    #[test]
    fn raw_on_separated_blobs_is_perfect() {
        let params = BlobsParams { centers: Some(vec![vec![0.0, 0.0], vec![50.0, 0.0], vec![0.0, 50.0]]), ..BlobsParams::default() };
        let ds = make_blobs(120, &params, 9).unwrap();
        let mut cfg = ExperimentConfig::for_dataset("blobs", 120);
        cfg.methods = vec![Method::Raw];
        cfg.seeds = vec![4];
        let out = run_on_dataset(&cfg, &ds, &|_| {}).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].metric_value, Some(1.0));
    }

    #[test]
    fn failures_become_rows() {
        let mut cfg = ExperimentConfig::for_dataset("circles", 40);
        cfg.methods = vec![Method::Kpca];
        cfg.kernels = vec![KernelTemplate::new(KernelFamily::Linear)];
        cfg.h = 5; // linear KPCA in 2-d has rank 2
        cfg.seeds = vec![1];
        let out = run_experiment(&cfg, &|_| {}).unwrap();
        assert!(out.records[0].is_failed());
        assert!(out.records[0].metric_name.starts_with("failed: "));
        assert!(out.aggregates.is_empty());
    }
}
