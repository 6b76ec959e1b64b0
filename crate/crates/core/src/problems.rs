//! Objective families, synthetic worker shards and gradient oracles.
//!
//! Every family is a finite sum over per-worker shards,
//! `F(w) = (1/N) Σ_i F_i(w)` with `F_i(w) = (1/n_i) Σ_j f(a_j, y_j; w)`:
//!
//! * least squares and quadratics: `f = ½(a·w − y)²`,
//! * logistic regression with labels `±1`: `f = log(1 + exp(−y a·w))`.
//!
//! A quadratic is a least-squares problem whose design is built from a
//! prescribed Hessian spectrum, so its conditioning is exact.

use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::SymMatrix;
use crate::rng::{Phase, RngRoot, Stream};
use crate::{Error, ParamVector, Result};

const EIG_TOL: f64 = 1e-12;
const REGEN_ATTEMPTS: u64 = 5;
const LOGISTIC_MAX_ITERS: u64 = 10_000_000;
/// Norm at which a logistic descent is declared to be escaping to infinity
/// (separable data).
const LOGISTIC_ESCAPE_NORM: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Lsr,
    Logistic,
    Quadratic,
}

impl Family {
    pub fn is_quadratic(self) -> bool {
        matches!(self, Family::Lsr | Family::Quadratic)
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lsr" | "least_squares" => Ok(Family::Lsr),
            "logistic" | "lr" => Ok(Family::Logistic),
            "quadratic" => Ok(Family::Quadratic),
            _ => Err(Error::Unknown { what: "problem family", name: s.into() }),
        }
    }
}

/// How worker shards differ from each other.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Hetero {
    #[default]
    None,
    /// Worker `i` draws features around `(i − (N−1)/2)·delta·u` for a fixed
    /// random unit direction `u`, while targets ignore the shift. Per-worker
    /// optima then disagree and `∇F_i(w*) ≠ 0`.
    ShiftedMeans { delta: f64 },
}

/// Generation knobs that do not change the problem's shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthOptions {
    /// Standard deviation of additive label noise (least squares and
    /// quadratics). Logistic labels are always Bernoulli draws.
    pub noise_std: f64,
    /// Ratio between the largest and smallest feature variance (least
    /// squares) or Hessian eigenvalue (quadratic).
    pub condition: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { noise_std: 0.0, condition: 1.0 }
    }
}

/// One worker's data: `n` rows of `d` features, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shard {
    pub d: usize,
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Shard {
    pub fn new(d: usize, features: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if features.len() != d * targets.len() {
            return Err(Error::Dimension { expected: d * targets.len(), got: features.len() });
        }
        if features.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("shard data".into()));
        }
        Ok(Self { d, features, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.features[j * self.d..(j + 1) * self.d]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub b: usize,
    pub full_batch: bool,
}

impl BatchSpec {
    pub fn full() -> Self {
        Self { b: 1, full_batch: true }
    }

    pub fn minibatch(b: usize) -> Self {
        Self { b, full_batch: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub family: Family,
    pub d: usize,
    pub shards: Vec<Shard>,
    /// Smoothness of `F`.
    pub l: f64,
    /// Strong convexity of `F`; zero for logistic regression.
    pub mu: f64,
    /// Largest per-worker smoothness constant `max_i L_i`.
    pub l_worker_max: f64,
    pub w_star: ParamVector,
    pub f_star: f64,
    /// Mean over workers of the single-sample gradient variance at `w*`.
    pub sigma_sq_at_opt: f64,
    /// `(1/N) Σ_i ||∇F_i(w*)||²`
    pub hetero_b_sq: f64,
    /// `∇F_i(w*)` per worker.
    pub grad_at_opt: Vec<ParamVector>,
    /// Hessian of `F` for the quadratic families.
    pub hessian: Option<SymMatrix>,
}

impl Problem {
    /// Builds a problem from explicit shards and computes its optimum and
    /// constants.
    pub fn from_shards(family: Family, shards: Vec<Shard>) -> Result<Self> {
        Self::assemble(family, shards, None, 1e-12)
    }

    /// A quadratic `½ (w−c)ᵀ M (w−c)` split over `workers` identical shards.
    pub fn quadratic(m: &SymMatrix, centre: &ParamVector, workers: usize) -> Result<Self> {
        let d = m.dim();
        if centre.dim() != d {
            return Err(Error::Dimension { expected: d, got: centre.dim() });
        }
        let ch = m.cholesky().ok_or_else(|| Error::Degenerate("Hessian is not positive definite".into()))?;
        // Rows of √d·Lᵀ give (1/d) AᵀA = L Lᵀ = M.
        let lower = ch.lower();
        let scale = (d as f64).sqrt();
        let mut features = vec![0.0; d * d];
        for r in 0..d {
            for c in 0..d {
                features[r * d + c] = scale * lower[c * d + r];
            }
        }
        let targets: Vec<f64> = (0..d).map(|r| dot(&features[r * d..(r + 1) * d], centre.as_slice())).collect();
        let shard = Shard::new(d, features, targets)?;
        Self::assemble(Family::Quadratic, vec![shard; workers.max(1)], Some(centre.clone()), 1e-12)
    }

    fn assemble(family: Family, shards: Vec<Shard>, centre: Option<ParamVector>, tol: f64) -> Result<Self> {
        let d =
            shards.first().map(|s| s.d).ok_or_else(|| Error::config("workers", "at least one shard is required"))?;
        for (i, s) in shards.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::EmptyShard(i));
            }
            if s.d != d {
                return Err(Error::Dimension { expected: d, got: s.d });
            }
            if family == Family::Logistic && s.targets.iter().any(|y| *y != 1.0 && *y != -1.0) {
                return Err(Error::config("targets", "logistic labels must be ±1"));
            }
        }
        let mut p = Problem {
            family,
            d,
            shards,
            l: 0.0,
            mu: 0.0,
            l_worker_max: 0.0,
            w_star: ParamVector::zeros(d),
            f_star: 0.0,
            sigma_sq_at_opt: 0.0,
            hetero_b_sq: 0.0,
            grad_at_opt: Vec::new(),
            hessian: None,
        };
        p.compute_constants();
        let (w_star, f_star) = match centre {
            Some(c) => {
                let f = p.loss(&c);
                (c, f)
            }
            None => p.solve_optimum(tol)?,
        };
        p.set_optimum(w_star, f_star);
        Ok(p)
    }

    fn compute_constants(&mut self) {
        let n_workers = self.num_workers() as f64;
        let factor = if self.family == Family::Logistic { 0.25 } else { 1.0 };
        let mut total = SymMatrix::zeros(self.d);
        let mut l_max: f64 = 0.0;
        for s in &self.shards {
            let gram = shard_gram(s);
            l_max = l_max.max(factor * gram.largest_eigenvalue(EIG_TOL));
            total.add_scaled(factor / n_workers, &gram);
        }
        self.l = total.largest_eigenvalue(EIG_TOL);
        self.l_worker_max = l_max;
        if self.family.is_quadratic() {
            self.mu = total.smallest_eigenvalue(EIG_TOL).min(self.l);
            self.hessian = Some(total);
        } else {
            self.mu = 0.0;
            self.hessian = None;
        }
    }

    fn set_optimum(&mut self, w_star: ParamVector, f_star: f64) {
        self.grad_at_opt = (0..self.num_workers()).map(|i| self.grad_worker_unchecked(i, &w_star)).collect();
        self.hetero_b_sq = self.grad_at_opt.iter().map(ParamVector::norm_sq).sum::<f64>() / self.num_workers() as f64;
        self.sigma_sq_at_opt = self.sigma_sq_at(&w_star);
        self.w_star = w_star;
        self.f_star = f_star;
    }

    pub fn num_workers(&self) -> usize {
        self.shards.len()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    fn check_dim(&self, w: &ParamVector) -> Result<()> {
        if w.dim() != self.d {
            return Err(Error::Dimension { expected: self.d, got: w.dim() });
        }
        Ok(())
    }

    /// Derivative of the per-sample loss with respect to `a·w`.
    fn residual(&self, margin: f64, y: f64) -> f64 {
        match self.family {
            Family::Lsr | Family::Quadratic => margin - y,
            Family::Logistic => -y * sigmoid(-y * margin),
        }
    }

    fn sample_loss(&self, margin: f64, y: f64) -> f64 {
        match self.family {
            Family::Lsr | Family::Quadratic => 0.5 * (margin - y) * (margin - y),
            Family::Logistic => softplus(-y * margin),
        }
    }

    pub fn loss_worker(&self, i: usize, w: &ParamVector) -> f64 {
        let s = &self.shards[i];
        let total: f64 = (0..s.len()).map(|j| self.sample_loss(dot(s.row(j), w.as_slice()), s.targets[j])).sum();
        total / s.len() as f64
    }

    pub fn loss(&self, w: &ParamVector) -> f64 {
        (0..self.num_workers()).map(|i| self.loss_worker(i, w)).sum::<f64>() / self.num_workers() as f64
    }

    /// `F(w) − F*`. Quadratic families use `½(w−w*)ᵀH(w−w*)`, which avoids
    /// cancellation near the optimum.
    pub fn excess_loss(&self, w: &ParamVector) -> f64 {
        match &self.hessian {
            Some(h) => 0.5 * h.quad_form(w.sub(&self.w_star).as_slice()),
            None => self.loss(w) - self.f_star,
        }
    }

    pub(crate) fn grad_worker_unchecked(&self, i: usize, w: &ParamVector) -> ParamVector {
        let s = &self.shards[i];
        let mut g = vec![0.0; self.d];
        for j in 0..s.len() {
            let row = s.row(j);
            let r = self.residual(dot(row, w.as_slice()), s.targets[j]);
            axpy(&mut g, r, row);
        }
        let inv = 1.0 / s.len() as f64;
        g.iter_mut().for_each(|v| *v *= inv);
        ParamVector::from_vec_unchecked(g)
    }

    /// Full gradient of worker `i`'s shard.
    pub fn grad_worker(&self, i: usize, w: &ParamVector) -> Result<ParamVector> {
        self.check_dim(w)?;
        self.check_worker(i)?;
        Ok(self.grad_worker_unchecked(i, w))
    }

    pub(crate) fn grad_full_unchecked(&self, w: &ParamVector) -> ParamVector {
        let mut g = ParamVector::zeros(self.d);
        for i in 0..self.num_workers() {
            g.add_assign(&self.grad_worker_unchecked(i, w));
        }
        g.scale_mut(1.0 / self.num_workers() as f64);
        g
    }

    /// `∇F(w)`, summed over workers in ascending index order.
    pub fn grad_full(&self, w: &ParamVector) -> Result<ParamVector> {
        self.check_dim(w)?;
        Ok(self.grad_full_unchecked(w))
    }

    fn check_worker(&self, i: usize) -> Result<()> {
        if i >= self.num_workers() {
            return Err(Error::config("worker", format!("index {i} out of range for {} workers", self.num_workers())));
        }
        Ok(())
    }

    pub(crate) fn grad_stochastic_unchecked(
        &self,
        i: usize,
        w: &ParamVector,
        batch: BatchSpec,
        rng: &mut Stream,
    ) -> ParamVector {
        let s = &self.shards[i];
        if batch.full_batch {
            return self.grad_worker_unchecked(i, w);
        }
        let mut g = vec![0.0; self.d];
        for _ in 0..batch.b {
            let j = if s.len() == 1 { 0 } else { rng.random_range(0..s.len()) };
            let row = s.row(j);
            let r = self.residual(dot(row, w.as_slice()), s.targets[j]);
            axpy(&mut g, r, row);
        }
        let inv = 1.0 / batch.b as f64;
        g.iter_mut().for_each(|v| *v *= inv);
        ParamVector::from_vec_unchecked(g)
    }

    /// Mini-batch gradient of worker `i`, rows drawn uniformly with
    /// replacement.
    pub fn grad_stochastic(
        &self,
        i: usize,
        w: &ParamVector,
        batch: BatchSpec,
        rng: &mut Stream,
    ) -> Result<ParamVector> {
        self.check_dim(w)?;
        self.check_worker(i)?;
        if self.shards[i].is_empty() {
            return Err(Error::EmptyShard(i));
        }
        if !batch.full_batch && (batch.b == 0 || batch.b > self.shards[i].len()) {
            return Err(Error::config("batch", format!("b = {} must lie in 1..={}", batch.b, self.shards[i].len())));
        }
        Ok(self.grad_stochastic_unchecked(i, w, batch, rng))
    }

    /// Exact single-sample gradient variance of worker `i` at `w`.
    pub fn sigma_sq_worker(&self, i: usize, w: &ParamVector) -> f64 {
        let s = &self.shards[i];
        let mean = self.grad_worker_unchecked(i, w);
        let mut acc = 0.0;
        for j in 0..s.len() {
            let row = s.row(j);
            let r = self.residual(dot(row, w.as_slice()), s.targets[j]);
            acc += row.iter().zip(mean.iter()).map(|(a, m)| (r * a - m) * (r * a - m)).sum::<f64>();
        }
        acc / s.len() as f64
    }

    /// Mean over workers of the exact single-sample gradient variance at
    /// `w`; a batch of size `b` has variance `sigma_sq_at(w)/b`.
    pub fn sigma_sq_at(&self, w: &ParamVector) -> f64 {
        (0..self.num_workers()).map(|i| self.sigma_sq_worker(i, w)).sum::<f64>() / self.num_workers() as f64
    }

    /// Ground-truth optimum. Quadratic families solve the normal equations
    /// with one refinement step; logistic regression runs full-gradient
    /// descent with step `1/L` until `||∇F|| ≤ tol`.
    pub fn solve_optimum(&self, tol: f64) -> Result<(ParamVector, f64)> {
        match self.family {
            Family::Lsr | Family::Quadratic => {
                let h = self.hessian.as_ref().expect("quadratic families carry a Hessian");
                let ch = h.cholesky().ok_or_else(|| Error::Degenerate("design matrix is rank deficient".into()))?;
                let zero = ParamVector::zeros(self.d);
                // ∇F(0) = −r, so H w* = r.
                let rhs = self.grad_full_unchecked(&zero).scaled(-1.0);
                let mut w = ParamVector::from_vec_unchecked(ch.solve(rhs.as_slice()));
                for _ in 0..2 {
                    let resid = self.grad_full_unchecked(&w);
                    let corr = ch.solve(resid.as_slice());
                    w.axpy(-1.0, &ParamVector::from_vec_unchecked(corr));
                }
                if !w.is_finite() {
                    return Err(Error::Degenerate("normal equations produced non-finite optimum".into()));
                }
                let f = self.loss(&w);
                Ok((w, f))
            }
            Family::Logistic => {
                let step = 1.0 / self.l;
                let mut w = ParamVector::zeros(self.d);
                let mut g = self.grad_full_unchecked(&w);
                let mut it = 0u64;
                while g.norm() > tol {
                    if it >= LOGISTIC_MAX_ITERS {
                        return Err(Error::NonConvergence { iterations: it, residual: g.norm() });
                    }
                    w.axpy(-step, &g);
                    if w.norm() > LOGISTIC_ESCAPE_NORM
                        || !w.is_finite()
                        || (it.is_multiple_of(1024) && self.separates(&w))
                    {
                        return Err(Error::Degenerate("logistic optimum escapes to infinity (separable data)".into()));
                    }
                    g = self.grad_full_unchecked(&w);
                    it += 1;
                }
                let f = self.loss(&w);
                Ok((w, f))
            }
        }
    }

    /// Whether `w` classifies every point with a positive margin, in which
    /// case the logistic loss has no minimizer.
    fn separates(&self, w: &ParamVector) -> bool {
        self.shards.iter().all(|s| (0..s.len()).all(|j| s.targets[j] * dot(s.row(j), w.as_slice()) > 0.0))
    }

    pub fn smoothness_constants(&self) -> (f64, f64) {
        (self.l, self.mu)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Draws a synthetic problem. Rank-deficient or separable draws are
/// regenerated from perturbed seeds, at most five times.
pub fn synth_problem(
    family: Family,
    d: usize,
    n_per_worker: usize,
    workers: usize,
    hetero: Hetero,
    seed: u64,
    opts: SynthOptions,
) -> Result<Problem> {
    if d == 0 {
        return Err(Error::config("d", "must be at least 1"));
    }
    if workers == 0 {
        return Err(Error::config("workers", "must be at least 1"));
    }
    if n_per_worker < d && family != Family::Logistic {
        return Err(Error::config("n_per_worker", format!("{n_per_worker} rows cannot determine {d} coordinates")));
    }
    if n_per_worker == 0 {
        return Err(Error::config("n_per_worker", "must be at least 1"));
    }
    if !(opts.condition >= 1.0 && opts.condition.is_finite()) {
        return Err(Error::config("condition", "must be a finite value ≥ 1"));
    }
    if !(opts.noise_std >= 0.0 && opts.noise_std.is_finite()) {
        return Err(Error::config("noise_std", "must be finite and non-negative"));
    }
    if let Hetero::ShiftedMeans { delta } = hetero {
        if !delta.is_finite() {
            return Err(Error::config("hetero.delta", "must be finite"));
        }
    }
    let root = RngRoot::new(seed);
    let mut last_err = None;
    for attempt in 0..REGEN_ATTEMPTS {
        let attempt_root = if attempt == 0 { root } else { root.child(attempt) };
        match draw(family, d, n_per_worker, workers, hetero, attempt_root, opts) {
            Ok(p) => return Ok(p),
            Err(e @ (Error::Degenerate(_) | Error::NonConvergence { .. })) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt ran"))
}

fn draw(
    family: Family,
    d: usize,
    n: usize,
    workers: usize,
    hetero: Hetero,
    root: RngRoot,
    opts: SynthOptions,
) -> Result<Problem> {
    let mut global = root.stream(Phase::Data, 0, 0);
    let w_true: Vec<f64> = gaussian_vec(&mut global, d);
    let mut u = gaussian_vec(&mut global, d);
    let un = norm(&u);
    u.iter_mut().for_each(|v| *v /= un);
    let delta = match hetero {
        Hetero::None => 0.0,
        Hetero::ShiftedMeans { delta } => delta,
    };
    let offset = |i: usize| (i as f64 - (workers as f64 - 1.0) / 2.0) * delta;

    match family {
        Family::Lsr | Family::Logistic => {
            // Feature standard deviations spread geometrically so that the
            // variance ratio equals `condition`.
            let scales: Vec<f64> = (0..d)
                .map(|j| {
                    let t = if d > 1 { j as f64 / (d - 1) as f64 } else { 0.0 };
                    opts.condition.powf(-0.5 * t)
                })
                .collect();
            let mut shards = Vec::with_capacity(workers);
            for i in 0..workers {
                let mut rng = root.stream(Phase::Data, i as u64 + 1, 0);
                let shift = offset(i);
                let mut features = Vec::with_capacity(n * d);
                let mut targets = Vec::with_capacity(n);
                for _ in 0..n {
                    let centred: Vec<f64> = scales.iter().map(|s| s * rng.sample::<f64, _>(StandardNormal)).collect();
                    let margin = dot(&centred, &w_true);
                    let y = if family == Family::Lsr {
                        margin + opts.noise_std * rng.sample::<f64, _>(StandardNormal)
                    } else if rng.random::<f64>() < sigmoid(margin) {
                        1.0
                    } else {
                        -1.0
                    };
                    features.extend(centred.iter().zip(&u).map(|(c, uj)| c + shift * uj));
                    targets.push(y);
                }
                shards.push(Shard::new(d, features, targets)?);
            }
            Problem::assemble(family, shards, None, 1e-12)
        }
        Family::Quadratic => {
            let eig: Vec<f64> = (0..d)
                .map(|j| {
                    let t = if d > 1 { j as f64 / (d - 1) as f64 } else { 0.0 };
                    1.0 - (1.0 - 1.0 / opts.condition) * t
                })
                .collect();
            let q = orthonormal_columns(&mut global, d, d)
                .ok_or_else(|| Error::Degenerate("random rotation is singular".into()))?;
            // B = diag(√λ) Qᵀ, so BᵀB = Q diag(λ) Qᵀ.
            let mut b = vec![0.0; d * d];
            for r in 0..d {
                for c in 0..d {
                    b[r * d + c] = eig[r].sqrt() * q[c * d + r];
                }
            }
            let scale = (n as f64).sqrt();
            let mut shards = Vec::with_capacity(workers);
            for i in 0..workers {
                let mut rng = root.stream(Phase::Data, i as u64 + 1, 0);
                // (1/n) AᵀA = Bᵀ UᵀU B = BᵀB for orthonormal U.
                let uo = orthonormal_columns(&mut rng, n, d)
                    .ok_or_else(|| Error::Degenerate("random design is rank deficient".into()))?;
                let mut features = vec![0.0; n * d];
                for r in 0..n {
                    for k in 0..d {
                        let coef = scale * uo[r * d + k];
                        if coef != 0.0 {
                            axpy(&mut features[r * d..(r + 1) * d], coef, &b[k * d..(k + 1) * d]);
                        }
                    }
                }
                let shift = offset(i);
                let centre: Vec<f64> = w_true.iter().zip(&u).map(|(w, uj)| w + shift * uj).collect();
                let targets = (0..n)
                    .map(|r| {
                        dot(&features[r * d..(r + 1) * d], &centre)
                            + opts.noise_std * rng.sample::<f64, _>(StandardNormal)
                    })
                    .collect();
                shards.push(Shard::new(d, features, targets)?);
            }
            let exact_centre = (delta == 0.0 && opts.noise_std == 0.0).then(|| ParamVector::from_vec_unchecked(w_true));
            Problem::assemble(family, shards, exact_centre, 1e-12)
        }
    }
}

/// `(1/n) AᵀA` of a shard.
fn shard_gram(s: &Shard) -> SymMatrix {
    let mut g = SymMatrix::zeros(s.d);
    let inv = 1.0 / s.len() as f64;
    for j in 0..s.len() {
        g.rank_one_update(inv, s.row(j));
    }
    g
}

/// `rows × cols` matrix with orthonormal columns (row-major), from modified
/// Gram–Schmidt on a Gaussian draw.
fn orthonormal_columns(rng: &mut Stream, rows: usize, cols: usize) -> Option<Vec<f64>> {
    let mut cs: Vec<Vec<f64>> = (0..cols).map(|_| gaussian_vec(rng, rows)).collect();
    for k in 0..cols {
        for j in 0..k {
            let (done, rest) = cs.split_at_mut(k);
            let p = dot(&rest[0], &done[j]);
            axpy(&mut rest[0], -p, &done[j]);
        }
        let n = norm(&cs[k]);
        if n < 1e-10 {
            return None;
        }
        cs[k].iter_mut().for_each(|v| *v /= n);
    }
    let mut out = vec![0.0; rows * cols];
    for (k, c) in cs.iter().enumerate() {
        for r in 0..rows {
            out[r * cols + k] = c[r];
        }
    }
    Some(out)
}

fn gaussian_vec(rng: &mut Stream, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(y: &mut [f64], c: f64, x: &[f64]) {
    for (a, b) in y.iter_mut().zip(x) {
        *a += c * b;
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}
