//! Per-iteration diagnostics, multi-seed summaries and CSV output.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::algorithms::{AlgoState, Resolved, RunStatus};
use crate::problems::Problem;
use crate::{Error, ParamVector, Result};

/// First line of every trace CSV.
pub const TRACE_SCHEMA: &str = "# schema: mcm-trace/1";
pub const TRACE_COLUMNS: [&str; 13] = [
    "run_id",
    "seed",
    "algorithm",
    "k",
    "gamma_k",
    "excess_loss",
    "grad_norm_sq",
    "upsilon",
    "xi",
    "lyapunov",
    "bits_up_cum",
    "bits_dwn_cum",
    "status",
];
/// Excess losses are clamped here before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub k: u64,
    pub excess_loss: f64,
    /// `||∇F(w_k)||²`
    pub grad_norm_sq: f64,
    /// `Υ_k = (1/N) Σ_i ||w_k − H_{k−1}^i||²`, zero without downlink memory.
    pub upsilon: f64,
    /// `Ξ_k = (1/N²) Σ_i ||h_k^i − ∇F_i(w*)||²`
    pub xi: f64,
    /// `V_k = ||w_k − w*||² + 32 γ L ω_dwn² Υ_k`
    pub lyapunov: f64,
    pub bits_up_cum: u64,
    pub bits_dwn_cum: u64,
    pub gamma_k: f64,
}

pub fn upsilon(cfg: &Resolved, state: &AlgoState) -> f64 {
    if !cfg.has_downlink_memory() {
        return 0.0;
    }
    let per_group: Vec<f64> = state.memory_prev.iter().map(|m| state.w.dist_sq(m)).collect();
    (0..cfg.workers).map(|i| per_group[cfg.group_of(i)]).sum::<f64>() / cfg.workers as f64
}

pub fn xi(problem: &Problem, state: &AlgoState) -> f64 {
    let n = problem.num_workers() as f64;
    state.h.iter().zip(&problem.grad_at_opt).map(|(h, g)| h.dist_sq(g)).sum::<f64>() / (n * n)
}

pub fn lyapunov(problem: &Problem, cfg: &Resolved, w: &ParamVector, upsilon: f64, gamma: f64) -> f64 {
    let omega = cfg.dwn.omega;
    w.dist_sq(&problem.w_star) + 32.0 * gamma * problem.l * omega * omega * upsilon
}

/// `ω/α` with a zero numerator winning over a zero step.
fn ratio(omega: f64, alpha: f64) -> f64 {
    if omega == 0.0 {
        0.0
    } else {
        omega / alpha
    }
}

/// Lyapunov function for heterogeneous workers:
/// `||w_k − w*||² + γ² C₁ Ξ_k + γ L C₂ Υ_k` with
/// `C₁ = 2ω_up(1 + 8γLω_dwn/α_dwn)/α_up` and `C₂ = 4ω_dwn/α_dwn`.
/// Its descent holds in expectation only, so it is reported, never asserted.
pub fn lyapunov_heterogeneous(problem: &Problem, cfg: &Resolved, state: &AlgoState, gamma: f64) -> f64 {
    let l = problem.l;
    let c2 = 4.0 * ratio(cfg.dwn.omega, cfg.alpha_dwn);
    let c1 = 2.0 * ratio(cfg.up.omega, cfg.alpha_up) * (1.0 + 2.0 * gamma * l * c2);
    let mut v = state.w.dist_sq(&problem.w_star);
    if c1 > 0.0 {
        v += gamma * gamma * c1 * xi(problem, state);
    }
    if c2 > 0.0 {
        v += gamma * l * c2 * upsilon(cfg, state);
    }
    v
}

pub fn record_iteration(problem: &Problem, cfg: &Resolved, state: &AlgoState, gamma_k: f64) -> IterRecord {
    let ups = upsilon(cfg, state);
    IterRecord {
        k: state.k,
        excess_loss: problem.excess_loss(&state.w),
        grad_norm_sq: problem.grad_full_unchecked(&state.w).norm_sq(),
        upsilon: ups,
        xi: xi(problem, state),
        lyapunov: lyapunov(problem, cfg, &state.w, ups, gamma_k),
        bits_up_cum: state.bits_up.0,
        bits_dwn_cum: state.bits_dwn.0,
        gamma_k,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub run_id: String,
    pub algorithm: String,
    pub seed: u64,
    pub status: RunStatus,
    /// Set when a constant step exceeds the maximal learning rate.
    pub warning: Option<String>,
    pub records: Vec<IterRecord>,
    pub final_w: ParamVector,
    /// Global iterates `w_0, w_1, …`, when requested.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub iterates: Vec<ParamVector>,
}

impl RunTrace {
    pub fn new(algorithm: String, seed: u64) -> Self {
        Self {
            run_id: format!("{algorithm}-s{seed}"),
            algorithm,
            seed,
            status: RunStatus::Running,
            warning: None,
            records: Vec::new(),
            final_w: ParamVector::zeros(0),
            iterates: Vec::new(),
        }
    }

    pub fn log10_excess(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.excess_loss.max(LOG_FLOOR).log10()).collect()
    }

    /// Mean `log10` excess loss over the final 10% of records.
    pub fn saturation_level(&self) -> Option<f64> {
        if self.status == RunStatus::Diverged || self.records.is_empty() {
            return None;
        }
        let logs = self.log10_excess();
        let window = logs.len().div_ceil(10).max(1);
        Some(crate::stats::mean(&logs[logs.len() - window..]))
    }

    /// CSV rows with the schema line and header.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(TRACE_SCHEMA);
        out.push('\n');
        out.push_str(&TRACE_COLUMNS.join(","));
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{},{},{}",
                self.run_id,
                self.seed,
                self.algorithm,
                r.k,
                r.gamma_k,
                r.excess_loss,
                r.grad_norm_sq,
                r.upsilon,
                r.xi,
                r.lyapunov,
                r.bits_up_cum,
                r.bits_dwn_cum,
                self.status
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub seeds: Vec<u64>,
    pub statuses: Vec<RunStatus>,
    pub k: Vec<u64>,
    /// Pointwise mean of `log10(max(excess, 1e-16))` across seeds.
    pub mean_log10: Vec<f64>,
    /// Pointwise population standard deviation of the same.
    pub std_log10: Vec<f64>,
    /// Mean over non-diverged seeds of the final-window `log10` level.
    pub saturation_level: Option<f64>,
    /// Seeds whose traces were padded with their last value.
    pub padded: Vec<u64>,
}

/// Pointwise mean and spread across traces. Shorter (diverged) traces are
/// padded with their last value.
pub fn aggregate(traces: &[RunTrace]) -> Result<RunSummary> {
    let first = traces.first().ok_or_else(|| Error::config("traces", "nothing to aggregate"))?;
    let len = traces.iter().map(|t| t.records.len()).max().unwrap_or(0);
    let logs: Vec<Vec<f64>> = traces.iter().map(RunTrace::log10_excess).collect();
    let mut mean_log10 = Vec::with_capacity(len);
    let mut std_log10 = Vec::with_capacity(len);
    let mut column = Vec::with_capacity(traces.len());
    for k in 0..len {
        column.clear();
        column.extend(logs.iter().filter_map(|l| l.get(k).or(l.last()).copied()));
        mean_log10.push(crate::stats::mean(&column));
        std_log10.push(crate::stats::std_pop(&column));
    }
    let k = (0..len).map(|j| traces.iter().find_map(|t| t.records.get(j)).map(|r| r.k).unwrap_or(j as u64)).collect();
    let levels: Vec<f64> = traces.iter().filter_map(RunTrace::saturation_level).collect();
    Ok(RunSummary {
        algorithm: first.algorithm.clone(),
        seeds: traces.iter().map(|t| t.seed).collect(),
        statuses: traces.iter().map(|t| t.status).collect(),
        k,
        mean_log10,
        std_log10,
        saturation_level: (!levels.is_empty()).then(|| crate::stats::mean(&levels)),
        padded: traces.iter().filter(|t| t.records.len() < len).map(|t| t.seed).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiVariant {
    Base,
    Ghost,
    Heterog,
    Noncvx,
    RandQuadratic,
}

impl FromStr for PhiVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(PhiVariant::Base),
            "ghost" => Ok(PhiVariant::Ghost),
            "heterog" => Ok(PhiVariant::Heterog),
            "noncvx" => Ok(PhiVariant::Noncvx),
            "rand_quadratic" => Ok(PhiVariant::RandQuadratic),
            _ => Err(Error::Unknown { what: "variance prefactor variant", name: s.into() }),
        }
    }
}

/// Inputs of the variance prefactors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiParams {
    pub gamma: f64,
    pub l: f64,
    pub omega_up: f64,
    pub omega_dwn: f64,
    pub workers: usize,
    pub alpha_dwn: f64,
    /// Number of independent downlink groups (1 for MCM, N for Rand-MCM).
    pub c: f64,
    /// Horizon `K`.
    pub k: f64,
}

/// Theoretical variance prefactor `Φ(γ)`.
pub fn phi(variant: PhiVariant, p: &PhiParams) -> Result<f64> {
    let gl = p.gamma * p.l;
    let up = 1.0 + p.omega_up;
    let v = match variant {
        PhiVariant::Base => up * (1.0 + 64.0 * gl * p.omega_dwn * p.omega_dwn),
        PhiVariant::Ghost => up * (1.0 + 2.0 * gl * p.omega_dwn),
        PhiVariant::Noncvx => up * (1.0 + 32.0 * gl * p.omega_dwn * p.omega_dwn),
        PhiVariant::Heterog => {
            if p.omega_dwn == 0.0 {
                1.0 + 8.0 * p.omega_up
            } else if p.alpha_dwn.is_nan() || p.alpha_dwn <= 0.0 {
                return Err(Error::config("alpha_dwn", "must be positive with a compressed downlink"));
            } else {
                (1.0 + 8.0 * p.omega_up) * (1.0 + 8.0 * gl * p.omega_dwn / p.alpha_dwn)
            }
        }
        PhiVariant::RandQuadratic => {
            if !(p.c > 0.0 && p.k > 0.0 && p.workers > 0) {
                return Err(Error::config("phi", "C, K and N must be positive"));
            }
            up * (1.0 + 4.0 * gl * gl * p.omega_dwn / p.k * (1.0 / p.c + p.omega_up / p.workers as f64))
        }
    };
    Ok(v)
}

/// Predicted saturation `γ²σ²Φ(γ)/(Nb)`.
pub fn predicted_saturation(phi_value: f64, gamma: f64, sigma_sq: f64, workers: usize, b: usize) -> f64 {
    gamma * gamma * sigma_sq * phi_value / (workers * b) as f64
}
