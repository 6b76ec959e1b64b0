//! Config-driven experiments: a synthetic problem, a list of algorithms and a
//! list of seeds, run as independent `(algorithm, seed)` jobs.
//!
//! ```toml
//! iterations = 600
//! seeds = [1, 2, 3, 4, 5]
//! batch = 50
//! gamma = "1/L"
//! output_dir = "out"
//!
//! [problem]
//! family = "lsr"
//! d = 20
//! n_per_worker = 200
//! workers = 20
//! seed = 1
//! noise_std = 0.5
//!
//! [[algorithms]]
//! name = "MCM"
//!
//! [[algorithms]]
//! name = "Artemis"
//! dwn = { kind = "quantize", s = 1 }
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::algorithms::{
    AlgoConfig, AlgoName, DwnMemoryMode, Engine, GammaPolicy, Participation, Resolved, RunStatus, StepPolicy,
    UpdateMode,
};
use crate::compressors::{CompressorKind, CompressorSpec};
use crate::metrics::{aggregate, RunSummary, RunTrace};
use crate::problems::{synth_problem, BatchSpec, Family, Hetero, Problem, SynthOptions};
use crate::validation::{check_compressor_moments, Report};
use crate::{Error, ParamVector, Result};

fn default_quantize() -> CompressorKind {
    CompressorKind::Quantize { s: 1 }
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    pub family: Family,
    pub d: usize,
    pub n_per_worker: usize,
    pub workers: usize,
    pub seed: u64,
    #[serde(default)]
    pub hetero: Hetero,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default = "one")]
    pub condition: f64,
}

fn one() -> f64 {
    1.0
}

impl ProblemBlock {
    pub fn build(&self) -> Result<Problem> {
        let opts = SynthOptions { noise_std: self.noise_std, condition: self.condition };
        synth_problem(self.family, self.d, self.n_per_worker, self.workers, self.hetero, self.seed, opts)
    }
}

/// `batch = 50` or `batch = "full"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BatchRepr", into = "BatchRepr")]
pub struct Batch(pub BatchSpec);

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BatchRepr {
    Size(usize),
    Word(String),
}

impl TryFrom<BatchRepr> for Batch {
    type Error = String;

    fn try_from(r: BatchRepr) -> std::result::Result<Self, String> {
        match r {
            BatchRepr::Size(0) => Err("batch size must be at least 1".into()),
            BatchRepr::Size(b) => Ok(Batch(BatchSpec::minibatch(b))),
            BatchRepr::Word(w) if w == "full" => Ok(Batch(BatchSpec::full())),
            BatchRepr::Word(w) => Err(format!("batch must be a size or \"full\", got {w:?}")),
        }
    }
}

impl From<Batch> for BatchRepr {
    fn from(b: Batch) -> Self {
        if b.0.full_batch {
            BatchRepr::Word("full".into())
        } else {
            BatchRepr::Size(b.0.b)
        }
    }
}

impl Default for Batch {
    fn default() -> Self {
        Batch(BatchSpec::full())
    }
}

/// Step-size request, resolved against a problem and an algorithm.
///
/// Text forms: `"gamma_max"`, `"c*gamma_max"`, `"1/L"`, `"c/L"`,
/// `"decaying"`; a bare number is a constant step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GammaRepr", into = "GammaRepr")]
pub enum GammaSpec {
    Constant(f64),
    OverL(f64),
    TimesGammaMax(f64),
    Decaying,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum GammaRepr {
    Value(f64),
    Text(String),
}

impl TryFrom<GammaRepr> for GammaSpec {
    type Error = Error;

    fn try_from(r: GammaRepr) -> Result<Self> {
        match r {
            GammaRepr::Value(v) => Ok(GammaSpec::Constant(v)),
            GammaRepr::Text(t) => t.parse(),
        }
    }
}

impl From<GammaSpec> for GammaRepr {
    fn from(g: GammaSpec) -> Self {
        match g {
            GammaSpec::Constant(v) => GammaRepr::Value(v),
            other => GammaRepr::Text(other.to_string()),
        }
    }
}

impl FromStr for GammaSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = || Error::config("gamma", format!("cannot read step size {s:?}"));
        let coef = |c: &str| -> Result<f64> {
            if c.is_empty() {
                Ok(1.0)
            } else {
                c.parse::<f64>().map_err(|_| bad())
            }
        };
        let spec = if t == "decaying" {
            GammaSpec::Decaying
        } else if let Some(c) = t.strip_suffix("gamma_max") {
            GammaSpec::TimesGammaMax(coef(c.strip_suffix('*').unwrap_or(c))?)
        } else if let Some(c) = t.strip_suffix("/L") {
            GammaSpec::OverL(coef(c)?)
        } else {
            GammaSpec::Constant(t.parse().map_err(|_| bad())?)
        };
        match spec {
            GammaSpec::Constant(v) | GammaSpec::OverL(v) | GammaSpec::TimesGammaMax(v)
                if !(v >= 0.0 && v.is_finite()) =>
            {
                Err(Error::config("gamma", format!("step size {s:?} must be finite and non-negative")))
            }
            spec => Ok(spec),
        }
    }
}

impl fmt::Display for GammaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GammaSpec::Constant(v) => write!(f, "{v}"),
            GammaSpec::OverL(c) => write!(f, "{c}/L"),
            GammaSpec::TimesGammaMax(c) => write!(f, "{c}*gamma_max"),
            GammaSpec::Decaying => f.write_str("decaying"),
        }
    }
}

impl GammaSpec {
    pub fn policy(&self, problem: &Problem, cfg: &Resolved) -> Result<StepPolicy> {
        let gamma_max = cfg.gamma_max(problem.l);
        let finite_max = if gamma_max.is_finite() { gamma_max } else { 1.0 / (2.0 * problem.l) };
        let constant = |gamma: f64| StepPolicy::new(finite_max, GammaPolicy::Constant { gamma });
        match *self {
            GammaSpec::Constant(g) => constant(g),
            GammaSpec::OverL(c) => constant(c / problem.l),
            GammaSpec::TimesGammaMax(c) => constant(c * finite_max),
            GammaSpec::Decaying => StepPolicy::decaying(finite_max, problem.mu),
        }
    }
}

/// One algorithm of an experiment; unset knobs come from the preset and the
/// experiment defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgoEntry {
    pub name: AlgoName,
    /// Output name; defaults to the algorithm name.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub up: Option<CompressorKind>,
    #[serde(default)]
    pub dwn: Option<CompressorKind>,
    #[serde(default)]
    pub alpha_up: Option<f64>,
    #[serde(default)]
    pub alpha_dwn: Option<f64>,
    #[serde(default)]
    pub update_mode: Option<UpdateMode>,
    #[serde(default)]
    pub dwn_memory_mode: Option<DwnMemoryMode>,
    #[serde(default)]
    pub participation: Option<Participation>,
    #[serde(default)]
    pub gamma: Option<GammaSpec>,
}

impl AlgoEntry {
    pub fn named(name: AlgoName) -> Self {
        Self {
            name,
            label: None,
            up: None,
            dwn: None,
            alpha_up: None,
            alpha_dwn: None,
            update_mode: None,
            dwn_memory_mode: None,
            participation: None,
            gamma: None,
        }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.name.to_string())
    }

    /// Explicit compressors win; otherwise the preset picks from the
    /// experiment defaults.
    fn algo_config(&self, up: CompressorKind, dwn: CompressorKind) -> AlgoConfig {
        let (preset_up, preset_dwn) = self.name.preset_compressors(up, dwn);
        AlgoConfig {
            name: self.name,
            up: self.up.unwrap_or(preset_up),
            dwn: self.dwn.unwrap_or(preset_dwn),
            alpha_up: self.alpha_up,
            alpha_dwn: self.alpha_dwn,
            update_mode: self.update_mode,
            dwn_memory_mode: self.dwn_memory_mode,
            participation: self.participation.unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemBlock,
    pub algorithms: Vec<AlgoEntry>,
    pub iterations: u64,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub batch: Batch,
    #[serde(default = "default_gamma")]
    pub gamma: GammaSpec,
    #[serde(default = "default_quantize")]
    pub up: CompressorKind,
    #[serde(default = "default_quantize")]
    pub dwn: CompressorKind,
    /// Starting point; zeros when absent.
    #[serde(default)]
    pub w0: Option<Vec<f64>>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_gamma() -> GammaSpec {
    GammaSpec::OverL(1.0)
}

/// An algorithm ready to run on the experiment's problem.
#[derive(Debug, Clone)]
pub struct PreparedAlgo {
    pub label: String,
    pub config: AlgoConfig,
    pub policy: StepPolicy,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("iterations", "must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.algorithms.is_empty() {
            return Err(Error::config("algorithms", "at least one algorithm is required"));
        }
        let mut labels = BTreeSet::new();
        for a in &self.algorithms {
            if !labels.insert(a.label()) {
                return Err(Error::config("algorithms", format!("{} appears twice; give one a label", a.label())));
            }
        }
        let mut seeds = BTreeSet::new();
        if let Some(dup) = self.seeds.iter().find(|s| !seeds.insert(**s)) {
            return Err(Error::config("seeds", format!("seed {dup} appears twice")));
        }
        if let Some(w0) = &self.w0 {
            if w0.len() != self.problem.d {
                return Err(Error::config("w0", format!("has {} entries, problem.d is {}", w0.len(), self.problem.d)));
            }
        }
        self.up.validate()?;
        self.dwn.validate()?;
        Ok(())
    }

    pub fn starting_point(&self) -> Result<ParamVector> {
        match &self.w0 {
            Some(v) => ParamVector::new(v.clone()),
            None => Ok(ParamVector::zeros(self.problem.d)),
        }
    }

    /// Resolves every algorithm against `problem`, reporting the first
    /// inconsistent override.
    pub fn prepare(&self, problem: &Problem) -> Result<Vec<PreparedAlgo>> {
        self.algorithms
            .iter()
            .map(|a| {
                let config = a.algo_config(self.up, self.dwn);
                let resolved = Resolved::new(&config, problem.dim(), problem.num_workers())?;
                let policy = a.gamma.unwrap_or(self.gamma).policy(problem, &resolved)?;
                Ok(PreparedAlgo { label: a.label(), config, policy })
            })
            .collect()
    }
}

/// Execution knobs that do not change results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Caps concurrent runs; `None` uses every core.
    pub jobs: Option<usize>,
    /// Added to every run seed (not to the problem seed).
    pub seed_offset: u64,
    /// Overrides `output_dir`.
    pub output_dir: Option<PathBuf>,
    /// Writes trace CSVs and summary JSONs when set.
    pub write: bool,
}

#[derive(Debug, Clone)]
pub struct AlgoResult {
    pub label: String,
    pub gamma_max: f64,
    pub traces: Vec<RunTrace>,
    pub summary: RunSummary,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub algorithms: Vec<AlgoResult>,
}

impl ExperimentResult {
    pub fn all_diverged(&self) -> bool {
        self.algorithms.iter().flat_map(|a| &a.traces).all(|t| t.status == RunStatus::Diverged)
    }

    pub fn get(&self, label: &str) -> Option<&AlgoResult> {
        self.algorithms.iter().find(|a| a.label == label)
    }
}

#[cfg(feature = "parallel")]
fn run_jobs<T: Send>(jobs: Option<usize>, n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Result<Vec<T>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::config("jobs", e.to_string()))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(&f).collect()))
}

#[cfg(not(feature = "parallel"))]
fn run_jobs<T: Send>(_jobs: Option<usize>, n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Result<Vec<T>> {
    Ok((0..n).map(f).collect())
}

/// Writes `contents` next to `path` and renames it into place.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn file_stem(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn trace_path(dir: &Path, label: &str, seed: u64) -> PathBuf {
    dir.join("traces").join(format!("{}-s{seed}.csv", file_stem(label)))
}

pub fn summary_path(dir: &Path, label: &str) -> PathBuf {
    dir.join("summaries").join(format!("{}.json", file_stem(label)))
}

/// Runs every `(algorithm, seed)` pair on the configured problem.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentResult> {
    cfg.validate()?;
    let problem = cfg.problem.build()?;
    run_on(cfg, &problem, opts)
}

/// As [`run_experiment`], on an already built problem.
pub fn run_on(cfg: &ExperimentConfig, problem: &Problem, opts: &RunOptions) -> Result<ExperimentResult> {
    let prepared = cfg.prepare(problem)?;
    let w0 = cfg.starting_point()?;
    let batch = cfg.batch.0;
    let engines =
        prepared.iter().map(|p| Engine::new(problem, &p.config, p.policy, batch)).collect::<Result<Vec<_>>>()?;
    let seeds: Vec<u64> = cfg.seeds.iter().map(|s| s.wrapping_add(opts.seed_offset)).collect();
    let out_dir = opts.output_dir.clone().unwrap_or_else(|| cfg.output_dir.clone());
    if opts.write {
        fs::create_dir_all(out_dir.join("traces"))?;
        fs::create_dir_all(out_dir.join("summaries"))?;
    }

    let jobs = engines.len() * seeds.len();
    let traces = run_jobs(opts.jobs, jobs, |j| -> Result<RunTrace> {
        let (a, s) = (j / seeds.len(), j % seeds.len());
        let mut trace = engines[a].run(&w0, seeds[s], cfg.iterations)?;
        trace.algorithm = prepared[a].label.clone();
        trace.run_id = format!("{}-s{}", prepared[a].label, seeds[s]);
        if opts.write {
            write_atomic(&trace_path(&out_dir, &prepared[a].label, seeds[s]), &trace.to_csv())?;
        }
        Ok(trace)
    })?;
    let mut traces = traces.into_iter().collect::<Result<Vec<_>>>()?.into_iter();

    let mut algorithms = Vec::with_capacity(engines.len());
    for (p, engine) in prepared.iter().zip(&engines) {
        let runs: Vec<RunTrace> = traces.by_ref().take(seeds.len()).collect();
        let summary = aggregate(&runs)?;
        if opts.write {
            let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Parse(e.to_string()))?;
            write_atomic(&summary_path(&out_dir, &p.label), &json)?;
        }
        algorithms.push(AlgoResult {
            label: p.label.clone(),
            gamma_max: engine.cfg.gamma_max(problem.l),
            traces: runs,
            summary,
        });
    }
    Ok(ExperimentResult { algorithms })
}

/// Moment checks on every compressor the experiment uses, at the problem
/// dimension.
pub fn preflight(cfg: &ExperimentConfig, seed: u64, trials: usize) -> Result<Vec<Report>> {
    let mut kinds: Vec<CompressorKind> = Vec::new();
    for a in &cfg.algorithms {
        let c = a.algo_config(cfg.up, cfg.dwn);
        for k in [c.up, c.dwn] {
            if !kinds.contains(&k) {
                kinds.push(k);
            }
        }
    }
    kinds
        .into_iter()
        .map(|k| {
            let spec = CompressorSpec::new(k, cfg.problem.d)?;
            let mut r = check_compressor_moments(&spec, cfg.problem.d, trials, seed)?;
            r.check = format!("moments[{k}]");
            Ok(r)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Gamma,
    AlphaDwn,
    S,
    Q,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "gamma" => Ok(SweepAxis::Gamma),
            "alpha_dwn" => Ok(SweepAxis::AlphaDwn),
            "s" => Ok(SweepAxis::S),
            "q" => Ok(SweepAxis::Q),
            _ => Err(Error::Unknown { what: "sweep axis", name: s.into() }),
        }
    }
}

/// A sweep value: a number, or a step-size expression on the gamma axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepValue(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub algorithm: String,
    pub value: String,
    pub gamma: f64,
    pub gamma_max: f64,
    /// A constant step above `gamma_max`.
    pub beyond_bound: bool,
    pub saturation_level: Option<f64>,
    pub diverged_seeds: usize,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "algorithm,value,gamma,gamma_max,beyond_bound,saturation_level,diverged_seeds";

    pub fn to_csv_line(&self) -> String {
        let sat = self.saturation_level.map(|s| format!("{s:e}")).unwrap_or_else(|| "NA".into());
        format!(
            "{},{},{:e},{:e},{},{},{}",
            self.algorithm, self.value, self.gamma, self.gamma_max, self.beyond_bound, sat, self.diverged_seeds
        )
    }
}

fn number(axis: &str, v: &str) -> Result<f64> {
    v.trim().parse::<f64>().map_err(|_| Error::config(axis.to_string(), format!("cannot read {v:?} as a number")))
}

/// Applies one sweep value to every algorithm of a copy of `cfg`.
pub fn apply_axis(cfg: &ExperimentConfig, axis: SweepAxis, value: &str) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    match axis {
        SweepAxis::Gamma => {
            let g: GammaSpec = value.parse()?;
            c.gamma = g;
            c.algorithms.iter_mut().for_each(|a| a.gamma = Some(g));
        }
        SweepAxis::AlphaDwn => {
            let a = number("alpha_dwn", value)?;
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::config("alpha_dwn", "sweep values must lie in [0, 1]"));
            }
            c.algorithms.iter_mut().for_each(|e| e.alpha_dwn = Some(a));
        }
        SweepAxis::S => {
            let s = value
                .trim()
                .parse::<u32>()
                .map_err(|_| Error::config("s", format!("cannot read {value:?} as a level count")))?;
            let kind = CompressorKind::Quantize { s };
            kind.validate()?;
            c.up = kind;
            c.dwn = kind;
            for e in &mut c.algorithms {
                e.up = e.up.map(|k| if matches!(k, CompressorKind::Quantize { .. }) { kind } else { k });
                e.dwn = e.dwn.map(|k| if matches!(k, CompressorKind::Quantize { .. }) { kind } else { k });
            }
        }
        SweepAxis::Q => {
            let q = number("q", value)?;
            let p = if q >= 1.0 { Participation::Full } else { Participation::Bernoulli { q } };
            c.algorithms.iter_mut().for_each(|e| e.participation = Some(p));
        }
    }
    c.validate()?;
    Ok(c)
}

/// One experiment per value; returns the saturation level of every
/// algorithm at every value. Nothing is written to disk.
pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[String], opts: &RunOptions) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::config("values", "a sweep needs at least one value"));
    }
    cfg.validate()?;
    let problem = cfg.problem.build()?;
    let quiet = RunOptions { write: false, ..opts.clone() };
    let mut rows = Vec::new();
    for v in values {
        let c = apply_axis(cfg, axis, v)?;
        let prepared = c.prepare(&problem)?;
        let result = run_on(&c, &problem, &quiet)?;
        for (p, r) in prepared.iter().zip(&result.algorithms) {
            let gamma = p.policy.gamma_at(0);
            rows.push(SweepRow {
                algorithm: r.label.clone(),
                value: v.trim().to_string(),
                gamma,
                gamma_max: r.gamma_max,
                beyond_bound: p.policy.warning().is_some() || gamma > r.gamma_max,
                saturation_level: r.summary.saturation_level,
                diverged_seeds: r.traces.iter().filter(|t| t.status == RunStatus::Diverged).count(),
            });
        }
    }
    Ok(rows)
}
