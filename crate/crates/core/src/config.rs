//! TOML experiment configuration.
//!
//! Every key except `[dataset]` is optional; unknown keys are rejected. A
//! minimal file:
//!
//! ```toml
//! [dataset]
//! name = "circles"
//! n = 200
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::{self, Dataset, LabelColumn, DEFAULT_FRACTIONS, DEFAULT_NOISE_SD, SYNTHETIC};
use crate::downstream::{BandwidthGrid, DEFAULT_K};
use crate::error::{Error, Result};
use crate::kernel_ae::{AeConfig, AeInit};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::linalg::DEFAULT_JITTER;
use crate::optim::DescentConfig;
use crate::spectral_contrastive::SpectralConfig;

/// Seeds used when a config lists none.
pub const DEFAULT_SEEDS: [u64; 5] = [11, 23, 37, 41, 53];
pub const DEFAULT_AUG_SD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Raw,
    Kpca,
    Simple,
    Spectral,
    Ae,
    AeDenoise,
}

impl Method {
    pub const ALL: [Method; 6] = [Self::Raw, Self::Kpca, Self::Simple, Self::Spectral, Self::Ae, Self::AeDenoise];

    pub fn name(self) -> &'static str {
        match self {
            Self::Raw => "raw",
            Self::Kpca => "kpca",
            Self::Simple => "simple",
            Self::Spectral => "spectral",
            Self::Ae => "ae",
            Self::AeDenoise => "ae_denoise",
        }
    }

    /// Whether the method is parameterized by a kernel.
    pub fn uses_kernel(self) -> bool {
        self != Self::Raw
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    /// Synthetic generator name.
    pub name: Option<String>,
    #[serde(default = "default_n")]
    pub n: usize,
    /// CSV file; relative paths resolve against the config file's directory.
    pub path: Option<PathBuf>,
    pub label: Option<LabelColumn>,
    #[serde(default = "yes")]
    pub header: bool,
    /// Seed for synthetic generation (independent of split seeds).
    #[serde(default)]
    pub seed: u64,
}

fn default_n() -> usize {
    200
}

fn yes() -> bool {
    true
}

impl DatasetSource {
    pub fn synthetic(name: &str, n: usize) -> Self {
        Self { name: Some(name.into()), n, path: None, label: None, header: true, seed: 0 }
    }

    /// Display name used in the result tables.
    pub fn display_name(&self) -> String {
        match (&self.name, &self.path) {
            (Some(n), _) => n.clone(),
            (None, Some(p)) => p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            (None, None) => String::new(),
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        let ds = match (&self.name, &self.path) {
            (Some(name), None) => datasets::generate(name, self.n, self.seed)?,
            (None, Some(path)) => {
                let mut ds = datasets::load_csv(path, self.label.as_ref(), self.header)?;
                ds.name = self.display_name();
                ds
            }
            _ => return Err(Error::Config("dataset needs exactly one of `name` or `path`".into())),
        };
        if ds.y.is_none() {
            return Err(Error::Config("dataset has no labels; set `label`".into()));
        }
        Ok(ds)
    }
}

/// A kernel to evaluate; `gamma` pins the bandwidth and skips selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelTemplate {
    pub family: KernelFamily,
    pub gamma: Option<f64>,
    pub depth: Option<u32>,
}

impl KernelTemplate {
    pub const DEFAULT_DEPTH: u32 = 2;

    pub fn new(family: KernelFamily) -> Self {
        Self { family, gamma: None, depth: None }
    }

    pub fn fixed(family: KernelFamily, gamma: f64) -> Self {
        Self { family, gamma: Some(gamma), depth: None }
    }

    /// Spec for a given bandwidth (ignored by bandwidth-free families).
    pub fn spec(&self, gamma: f64) -> KernelSpec {
        match self.family {
            KernelFamily::Gaussian => KernelSpec::gaussian(gamma),
            KernelFamily::Laplacian => KernelSpec::laplacian(gamma),
            KernelFamily::Linear => KernelSpec::linear(),
            KernelFamily::ReluNtk => KernelSpec::relu_ntk(self.depth.unwrap_or(Self::DEFAULT_DEPTH)),
        }
    }

    /// Label for the `kernel` column.
    pub fn label(&self) -> String {
        match (self.family, self.depth) {
            (KernelFamily::ReluNtk, Some(d)) if d != Self::DEFAULT_DEPTH => format!("relu_ntk{d}"),
            (f, _) => f.name().to_string(),
        }
    }
}

fn default_kernels() -> Vec<KernelTemplate> {
    KernelFamily::ALL.iter().map(|&f| KernelTemplate::new(f)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitFractions {
    pub unlabeled: f64,
    pub labeled: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        let (unlabeled, labeled, test) = DEFAULT_FRACTIONS;
        Self { unlabeled, labeled, test }
    }
}

impl SplitFractions {
    pub fn as_tuple(&self) -> (f64, f64, f64) {
        (self.unlabeled, self.labeled, self.test)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSettings {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self { min: 0.01, max: 100.0, steps: 15 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimpleSettings {
    pub jitter: f64,
}

impl Default for SimpleSettings {
    fn default() -> Self {
        Self { jitter: DEFAULT_JITTER }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralSettings {
    pub lambda: f64,
    pub jitter: f64,
    pub init_sd: f64,
    pub step: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub backtracking: bool,
}

impl Default for SpectralSettings {
    fn default() -> Self {
        let c = SpectralConfig::default();
        Self {
            lambda: c.lambda,
            jitter: c.jitter_scale,
            init_sd: c.init_sd,
            step: c.descent.step,
            max_iters: c.descent.max_iters,
            tol: c.descent.tol,
            backtracking: c.descent.backtracking,
        }
    }
}

impl SpectralSettings {
    pub fn to_config(&self, h: usize) -> SpectralConfig {
        SpectralConfig {
            h,
            lambda: self.lambda,
            jitter_scale: self.jitter,
            init_sd: self.init_sd,
            descent: DescentConfig { step: self.step, max_iters: self.max_iters, tol: self.tol, backtracking: self.backtracking },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeSettings {
    pub lambda: f64,
    pub jitter: f64,
    pub init: AeInit,
    pub step: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub backtracking: bool,
}

impl Default for AeSettings {
    fn default() -> Self {
        let c = AeConfig::default();
        Self {
            lambda: c.lambda,
            jitter: c.jitter_scale,
            init: c.init,
            step: c.descent.step,
            max_iters: c.descent.max_iters,
            tol: c.descent.tol,
            backtracking: c.descent.backtracking,
        }
    }
}

impl AeSettings {
    pub fn to_config(&self, h: usize) -> AeConfig {
        AeConfig {
            h,
            lambda: self.lambda,
            jitter_scale: self.jitter,
            init: self.init,
            descent: DescentConfig { step: self.step, max_iters: self.max_iters, tol: self.tol, backtracking: self.backtracking },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_kernels")]
    pub kernels: Vec<KernelTemplate>,
    #[serde(default = "default_h")]
    pub h: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub split: SplitFractions,
    #[serde(default)]
    pub grid: GridSettings,
    #[serde(default = "default_aug_sd")]
    pub aug_sd: f64,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    #[serde(default)]
    pub simple: SimpleSettings,
    #[serde(default)]
    pub spectral: SpectralSettings,
    #[serde(default)]
    pub ae: AeSettings,
    /// Output directory for `results.csv` and `aggregate.csv`.
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Evaluate cells and grid points on the thread pool.
    #[serde(default = "yes")]
    pub parallel: bool,
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn default_h() -> usize {
    2
}
fn default_k() -> usize {
    DEFAULT_K
}
fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}
fn default_aug_sd() -> f64 {
    DEFAULT_AUG_SD
}
fn default_noise_sd() -> f64 {
    DEFAULT_NOISE_SD
}
fn default_output() -> PathBuf {
    PathBuf::from("results")
}

fn cfg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

impl ExperimentConfig {
    /// Defaults for a named synthetic dataset.
    pub fn for_dataset(name: &str, n: usize) -> Self {
        Self {
            dataset: DatasetSource::synthetic(name, n),
            methods: default_methods(),
            kernels: default_kernels(),
            h: default_h(),
            k: default_k(),
            seeds: default_seeds(),
            split: SplitFractions::default(),
            grid: GridSettings::default(),
            aug_sd: DEFAULT_AUG_SD,
            noise_sd: DEFAULT_NOISE_SD,
            simple: SimpleSettings::default(),
            spectral: SpectralSettings::default(),
            ae: AeSettings::default(),
            output: default_output(),
            parallel: true,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a file; relative dataset and output paths become
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(p) = cfg.dataset.path.as_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.output.is_relative() {
            cfg.output = base.join(&cfg.output);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn grid(&self) -> Result<BandwidthGrid> {
        BandwidthGrid::log_spaced(self.grid.min, self.grid.max, self.grid.steps).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset.name, &self.dataset.path) {
            (Some(name), None) => {
                if !SYNTHETIC.contains(&name.as_str()) {
                    return cfg_err(format!("unknown dataset {name:?}; expected one of {SYNTHETIC:?} or a `path`"));
                }
                if self.dataset.n == 0 {
                    return cfg_err("dataset.n must be >= 1");
                }
            }
            (None, Some(_)) => {
                if self.dataset.label.is_none() {
                    return cfg_err("CSV datasets need a `label` column (name or 0-based index)");
                }
            }
            _ => return cfg_err("dataset needs exactly one of `name` or `path`"),
        }
        if self.methods.is_empty() {
            return cfg_err("methods must not be empty");
        }
        if self.methods.iter().any(|m| m.uses_kernel()) && self.kernels.is_empty() {
            return cfg_err("kernel methods need at least one kernel");
        }
        for k in &self.kernels {
            if let Some(g) = k.gamma {
                if !(g > 0.0 && g.is_finite()) {
                    return cfg_err(format!("kernel gamma must be > 0, got {g}"));
                }
            }
            if k.depth.is_some() && k.family != KernelFamily::ReluNtk {
                return cfg_err(format!("`depth` only applies to relu_ntk, not {}", k.family.name()));
            }
            if k.depth == Some(0) {
                return cfg_err("relu_ntk depth must be >= 1");
            }
        }
        if self.h == 0 {
            return cfg_err("h must be >= 1");
        }
        if self.k == 0 {
            return cfg_err("k must be >= 1");
        }
        if self.seeds.is_empty() {
            return cfg_err("seeds must not be empty");
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return cfg_err("seeds must be distinct");
        }
        let s = self.split;
        if !(s.unlabeled > 0.0 && s.labeled > 0.0 && s.test > 0.0) || (s.unlabeled + s.labeled + s.test - 1.0).abs() > 1e-9 {
            return cfg_err(format!("split fractions must be positive and sum to 1, got {:?}", s.as_tuple()));
        }
        self.grid()?;
        if !(self.aug_sd >= 0.0) || !(self.noise_sd >= 0.0) {
            return cfg_err("aug_sd and noise_sd must be >= 0");
        }
        if !(self.simple.jitter >= 0.0) {
            return cfg_err("simple.jitter must be >= 0");
        }
        if !(self.spectral.lambda > 0.0) || !(self.ae.lambda > 0.0) {
            return cfg_err("lambda must be > 0");
        }
        if !(self.spectral.jitter >= 0.0) || !(self.ae.jitter >= 0.0) {
            return cfg_err("jitter must be >= 0");
        }
        self.spectral.to_config(self.h).descent.validate().map_err(|e| Error::Config(format!("spectral: {e}")))?;
        self.ae.to_config(self.h).descent.validate().map_err(|e| Error::Config(format!("ae: {e}")))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = ExperimentConfig::from_toml("[dataset]\nname = \"circles\"\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::for_dataset("circles", 200));
        assert_eq!(cfg.seeds, DEFAULT_SEEDS);
        assert_eq!(cfg.grid().unwrap(), BandwidthGrid::default());
    }

    #[test]
    fn full_file_parses() {
        let text = r#"
            methods = ["raw", "simple", "ae_denoise"]
            h = 3
            seeds = [1, 2]
            output = "out"
            parallel = false

            [dataset]
            path = "data.csv"
            label = "class"

            [[kernels]]
            family = "gaussian"
            gamma = 0.5

            [[kernels]]
            family = "relu_ntk"
            depth = 3

            [split]
            unlabeled = 0.6
            labeled = 0.1
            test = 0.3

            [spectral]
            lambda = 0.1
            max_iters = 50

            [ae]
            init = "random"
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.methods, vec![Method::Raw, Method::Simple, Method::AeDenoise]);
        assert_eq!(cfg.dataset.label, Some(LabelColumn::Name("class".into())));
        assert_eq!(cfg.kernels[1].spec(1.0), KernelSpec::relu_ntk(3));
        assert_eq!(cfg.kernels[1].label(), "relu_ntk3");
        assert_eq!(cfg.spectral.max_iters, 50);
        assert_eq!(cfg.spectral.step, SpectralSettings::default().step);
        assert_eq!(cfg.ae.init, AeInit::Random);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::for_dataset("moons", 50);
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn rejects_invalid_files() {
        let bad = [
            "[dataset]\nname = \"circles\"\nbogus = 1\n",
            "h = 2\n",
            "[dataset]\nname = \"nope\"\n",
            "[dataset]\nname = \"circles\"\npath = \"x.csv\"\n",
            "[dataset]\npath = \"x.csv\"\n",
            "h = 0\n[dataset]\nname = \"circles\"\n",
            "seeds = []\n[dataset]\nname = \"circles\"\n",
            "seeds = [1, 1]\n[dataset]\nname = \"circles\"\n",
            "methods = [\"bogus\"]\n[dataset]\nname = \"circles\"\n",
            "[dataset]\nname = \"circles\"\n[split]\nunlabeled = 0.5\nlabeled = 0.5\ntest = 0.5\n",
            "[dataset]\nname = \"circles\"\n[spectral]\nlambda = 0.0\n",
            "[dataset]\nname = \"circles\"\n[[kernels]]\nfamily = \"gaussian\"\ndepth = 2\n",
            "[dataset]\nname = \"circles\"\n[grid]\nsteps = 0\n",
        ];
        for text in bad {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))), "accepted: {text}");
        }
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        fs::write(&path, "[dataset]\npath = \"d.csv\"\nlabel = 2\n").unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.dataset.path.unwrap(), dir.path().join("d.csv"));
        assert_eq!(cfg.dataset.label, Some(LabelColumn::Index(2)));
        assert_eq!(cfg.output, dir.path().join("results"));
    }

    #[test]
    fn missing_file_is_a_config_error() {
        assert!(matches!(ExperimentConfig::load(Path::new("/nonexistent/exp.toml")), Err(Error::Config(_))));
    }
}
