//! Minimum-contrast estimation from discrete observations.
//!
//! With `x_θ` the deterministic flow started at `x0`, the residuals
//!
//! ```text
//! A_k(θ) = X_k − x_θ(t_k) − Φ_θ(t_k, t_{k−1}) (X_{k−1} − x_θ(t_{k−1}))
//! ```
//!
//! are approximately independent `N(0, Δ_k S_k / N)`, which gives the
//! objective
//!
//! ```text
//! U_N(θ) = Σ_k (1/N) log det S_k + (1/Δ_k) A_kᵀ S_k⁻¹ A_k.
//! ```
//!
//! The information matrix is `I(n, θ) = Σ_k (1/Δ_k) D_kᵀ S_k⁻¹ D_k` with
//! `D_k = −∂x_θ(t_k)/∂θ + Φ_k ∂x_θ(t_{k−1})/∂θ`, and `(N I)⁻¹` is the
//! asymptotic covariance of `θ̂`.

pub mod ellipse;
pub mod optimize;

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

pub use ellipse::{chi2_2_quantile, Ellipse};
pub use optimize::{multistart, nelder_mead, OptimizerSettings};

use crate::error::{Error, Result};
use crate::linalg::{inverse, matmul, sym_condition, sym_rank, Cholesky};
use crate::model::{ParamVector, TransitionTable};
use crate::odeflow::{FlowCache, FlowOptions, SquareRoot};
use crate::simulate::ObservationSet;

/// Default RK4 step for a model: fine for fast epidemics, coarser for the
/// multi-year seasonal model.
pub fn default_max_step(table: &TransitionTable) -> f64 {
    if table.time_dependent {
        0.25
    } else {
        0.05
    }
}

/// How `x_θ(t_0)` is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum X0Policy {
    Known(Vec<f64>),
    FirstObservation,
}

/// Everything needed to evaluate and minimize the contrast.
#[derive(Debug, Clone)]
pub struct ContrastContext {
    pub table: TransitionTable,
    pub obs: ObservationSet,
    pub population: f64,
    pub x0: X0Policy,
    /// Fixed values, bounds and free mask; free values are the defaults for
    /// the initial point.
    pub theta: ParamVector,
    pub max_step: f64,
    /// Include the `(1/N) log det S_k` term.
    pub log_det_correction: bool,
    pub optimizer: OptimizerSettings,
    /// Extra starting point for the search (free coordinates).
    pub initial: Option<Vec<f64>>,
    pub level: f64,
}

/// `I(n, θ)` with identifiability diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationMatrix {
    pub names: Vec<String>,
    pub matrix: Vec<f64>,
    pub rank: usize,
    pub condition: f64,
}

impl InformationMatrix {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    /// `(N I)⁻¹`, or `None` when `I` is singular.
    pub fn covariance(&self, population: f64) -> Option<Vec<f64>> {
        if self.rank < self.dim() {
            return None;
        }
        let scaled: Vec<f64> = self.matrix.iter().map(|v| v * population).collect();
        inverse(&scaled, self.dim())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub estimator: String,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub starts: usize,
    pub restarts: usize,
    pub converged_starts: usize,
    /// Evaluations that failed (non-PSD weight, ODE error) and were
    /// treated as `+∞`.
    pub failed_evaluations: usize,
    /// Central-difference gradient norm of the objective at `θ̂`.
    #[serde(with = "nan_as_null")]
    pub gradient_norm: f64,
    pub information_rank: usize,
    pub information_condition: Option<f64>,
    pub population: f64,
    pub n: usize,
    pub notes: Vec<String>,
}

impl Diagnostics {
    pub fn new(estimator: impl Into<String>, population: f64, n: usize) -> Self {
        Self {
            estimator: estimator.into(),
            converged: true,
            iterations: 0,
            evaluations: 0,
            starts: 0,
            restarts: 0,
            converged_starts: 0,
            failed_evaluations: 0,
            gradient_norm: 0.0,
            information_rank: 0,
            information_condition: None,
            population,
            n,
            notes: Vec::new(),
        }
    }
}

/// Result of one estimation. Matrices are over the free parameters in the
/// order of `theta_hat.free_names()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub theta_hat: ParamVector,
    /// `null` in JSON when there is no contrast (complete-data MLE).
    #[serde(with = "nan_as_null")]
    pub u_min: f64,
    pub info: Vec<Vec<f64>>,
    pub cov: Option<Vec<Vec<f64>>>,
    pub ellipsoids: Vec<Ellipse>,
    pub diagnostics: Diagnostics,
}

/// JSON has no NaN; store it as `null`.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

fn to_rows(a: &[f64], m: usize) -> Vec<Vec<f64>> {
    a.chunks(m).map(|r| r.to_vec()).collect()
}

/// Standard normal quantile for a two-sided interval at `level`.
pub fn normal_two_sided(level: f64) -> f64 {
    crate::stats::normal_quantile(0.5 + level / 2.0)
}

impl EstimationReport {
    /// Assembles a report and its pairwise ellipses (centered at `θ̂`).
    pub fn assemble(
        theta_hat: ParamVector,
        u_min: f64,
        info: &InformationMatrix,
        level: f64,
        mut diagnostics: Diagnostics,
    ) -> Self {
        let m = info.dim();
        let cov = info.covariance(diagnostics.population);
        diagnostics.information_rank = info.rank;
        diagnostics.information_condition = info.condition.is_finite().then_some(info.condition);
        let mut ellipsoids = Vec::new();
        if let Some(c) = &cov {
            let names = theta_hat.free_names();
            let values = theta_hat.free_values();
            for i in 0..m {
                for j in (i + 1)..m {
                    let marginal = [c[i * m + i], c[i * m + j], c[j * m + i], c[j * m + j]];
                    match Ellipse::from_covariance(
                        [names[i].clone(), names[j].clone()],
                        [values[i], values[j]],
                        marginal,
                        level,
                    ) {
                        Ok(e) => ellipsoids.push(e),
                        Err(e) => diagnostics.notes.push(format!("ellipse {}/{}: {e}", names[i], names[j])),
                    }
                }
            }
        } else {
            diagnostics
                .notes
                .push(format!("information matrix singular (rank {} of {m})", info.rank));
        }
        Self {
            theta_hat,
            u_min,
            info: to_rows(&info.matrix, m),
            cov: cov.map(|c| to_rows(&c, m)),
            ellipsoids,
            diagnostics,
        }
    }

    pub fn free_names(&self) -> Vec<String> {
        self.theta_hat.free_names()
    }

    /// Same report with its ellipses redrawn at another confidence level.
    pub fn with_level(&self, level: f64) -> Result<Self> {
        let mut out = self.clone();
        out.ellipsoids = self
            .ellipsoids
            .iter()
            .map(|e| {
                let cov = self.marginal(&e.params[0], &e.params[1]).ok_or_else(|| {
                    Error::Format(format!("no covariance for {}/{}", e.params[0], e.params[1]))
                })?;
                Ellipse::from_covariance(e.params.clone(), e.center, cov, level)
            })
            .collect::<Result<_>>()?;
        Ok(out)
    }

    /// 2×2 marginal covariance of two free parameters, row-major.
    pub fn marginal(&self, a: &str, b: &str) -> Option<[f64; 4]> {
        let names = self.free_names();
        let i = names.iter().position(|n| n == a)?;
        let j = names.iter().position(|n| n == b)?;
        let c = self.cov.as_ref()?;
        Some([c[i][i], c[i][j], c[j][i], c[j][j]])
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.theta_hat.get(name)
    }

    pub fn standard_error(&self, name: &str) -> Option<f64> {
        let i = self.free_names().iter().position(|n| n == name)?;
        self.cov.as_ref().map(|c| c[i][i].max(0.0).sqrt())
    }

    /// Two-sided Gaussian interval for one parameter.
    pub fn interval(&self, name: &str, level: f64) -> Option<(f64, f64)> {
        let (v, se) = (self.estimate(name)?, self.standard_error(name)?);
        let z = normal_two_sided(level);
        Some((v - z * se, v + z * se))
    }

    pub fn ellipse(&self, a: &str, b: &str) -> Option<&Ellipse> {
        self.ellipsoids.iter().find(|e| e.params[0] == a && e.params[1] == b)
    }

    pub fn csv_header(free_names: &[String]) -> Vec<String> {
        let mut h: Vec<String> = ["estimator", "n", "population", "converged", "u_min", "gradient_norm"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for name in free_names {
            h.push(name.clone());
            h.push(format!("{name}_se"));
        }
        h
    }

    pub fn csv_record(&self) -> Vec<String> {
        let d = &self.diagnostics;
        let mut row = vec![
            d.estimator.clone(),
            d.n.to_string(),
            d.population.to_string(),
            d.converged.to_string(),
            self.u_min.to_string(),
            d.gradient_norm.to_string(),
        ];
        for name in self.free_names() {
            row.push(self.estimate(&name).unwrap().to_string());
            row.push(self.standard_error(&name).map(|v| v.to_string()).unwrap_or_default());
        }
        row
    }
}

impl ContrastContext {
    pub fn new(
        table: TransitionTable,
        obs: ObservationSet,
        population: f64,
        x0: X0Policy,
        theta: ParamVector,
    ) -> Result<Self> {
        if obs.dim != table.dim() {
            return Err(Error::InvalidArgument(format!(
                "observations have dimension {}, model has {}",
                obs.dim,
                table.dim()
            )));
        }
        if obs.population as f64 != population {
            return Err(Error::InvalidArgument(format!(
                "observations normalized by {} but contrast uses N = {population}",
                obs.population
            )));
        }
        if let X0Policy::Known(x) = &x0 {
            if x.len() != table.dim() {
                return Err(Error::InvalidArgument("x0 dimension mismatch".into()));
            }
        }
        theta.validate()?;
        let max_step = default_max_step(&table);
        Ok(Self {
            table,
            obs,
            population,
            x0,
            theta,
            max_step,
            log_det_correction: true,
            optimizer: OptimizerSettings::default(),
            initial: None,
            level: 0.95,
        })
    }

    pub fn x0(&self) -> Vec<f64> {
        match &self.x0 {
            X0Policy::Known(x) => x.clone(),
            X0Policy::FirstObservation => self.obs.state(0).to_vec(),
        }
    }

    pub fn flow(&self, theta: &ParamVector, sensitivities: bool) -> Result<FlowCache> {
        let mut opts = FlowOptions::new(self.max_step);
        opts.sensitivities = sensitivities;
        FlowCache::build(&self.table, theta, &self.x0(), &self.obs.times, opts)
    }

    /// `A_k(θ)` for `1 ≤ k ≤ n` from a flow built for this context.
    pub fn residual(&self, flow: &FlowCache, k: usize) -> Vec<f64> {
        let p = self.obs.dim;
        let prev: Vec<f64> = (0..p).map(|i| self.obs.state(k - 1)[i] - flow.state(k - 1)[i]).collect();
        let mut carried = vec![0.0; p];
        matmul(flow.interval_resolvent(k), &prev, p, p, 1, &mut carried);
        (0..p)
            .map(|i| self.obs.state(k)[i] - flow.state(k)[i] - carried[i])
            .collect()
    }

    /// `U_N` from a prebuilt flow.
    pub fn contrast_from_flow(&self, flow: &FlowCache) -> Result<f64> {
        let p = self.obs.dim;
        let mut total = 0.0;
        for k in 1..=self.obs.n() {
            let chol = Cholesky::factor_pd(flow.weight_matrix(k), p)?;
            let a = self.residual(flow, k);
            total += chol.quad_form(&a) / flow.delta(k);
            if self.log_det_correction {
                total += chol.log_det() / self.population;
            }
        }
        Ok(total)
    }

    pub fn contrast_value(&self, theta: &ParamVector) -> Result<f64> {
        self.contrast_from_flow(&self.flow(theta, false)?)
    }

    /// `U_N` with the covariance equation driven by `σ σᵀ` for the given
    /// square root.
    pub fn contrast_with_root(&self, theta: &ParamVector, root: SquareRoot) -> Result<f64> {
        let mut opts = FlowOptions::new(self.max_step);
        opts.root = Some(root);
        let flow = FlowCache::build(&self.table, theta, &self.x0(), &self.obs.times, opts)?;
        self.contrast_from_flow(&flow)
    }

    /// `I(n, θ)` over the free parameters of `theta`.
    pub fn information_matrix(&self, theta: &ParamVector) -> Result<InformationMatrix> {
        information_matrix(&self.table, theta, &self.x0(), &self.obs.times, self.max_step)
    }

    fn search_box(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let idx = self.theta.free_indices();
        if idx.is_empty() {
            return Err(Error::InvalidArgument("no free parameters".into()));
        }
        let mut lo = Vec::with_capacity(idx.len());
        let mut hi = Vec::with_capacity(idx.len());
        for &i in &idx {
            let (l, u) = (self.theta.lower[i], self.theta.upper[i]);
            if !(l > 0.0 && u.is_finite() && u > l) {
                return Err(Error::ParamDomain {
                    name: self.theta.names[i].clone(),
                    detail: format!("free parameter needs finite positive bounds, got [{l}, {u}]"),
                });
            }
            lo.push(l.ln());
            hi.push(u.ln());
        }
        Ok((lo, hi))
    }

    /// Central-difference gradient of `U_N` in the free parameters.
    pub fn gradient(&self, theta: &ParamVector) -> Result<Vec<f64>> {
        let idx = theta.free_indices();
        let mut g = Vec::with_capacity(idx.len());
        for &i in &idx {
            let v = theta.values[i];
            let h = 1e-5 * v.abs().max(1e-8);
            let up = (v + h).min(theta.upper[i]);
            let dn = (v - h).max(theta.lower[i]);
            let mut tp = theta.clone();
            tp.values[i] = up;
            let mut tm = theta.clone();
            tm.values[i] = dn;
            g.push((self.contrast_value(&tp)? - self.contrast_value(&tm)?) / (up - dn));
        }
        Ok(g)
    }

    /// `θ̂ = argmin U_N` by Nelder-Mead in log coordinates over the box, with
    /// multistarts.
    pub fn minimize(&self) -> Result<EstimationReport> {
        let (lo, hi) = self.search_box()?;
        let m = lo.len();
        if self.obs.n() * self.obs.dim < m {
            return Err(Error::InvalidArgument(format!(
                "{} observation intervals cannot identify {m} parameters",
                self.obs.n()
            )));
        }
        let failures = AtomicUsize::new(0);
        let objective = |u: &[f64]| -> f64 {
            let free: Vec<f64> = u.iter().map(|v| v.exp()).collect();
            let theta = self.theta.with_free_values(&free);
            match self.contrast_value(&theta) {
                Ok(v) if v.is_finite() => v,
                _ => {
                    failures.fetch_add(1, Ordering::Relaxed);
                    f64::INFINITY
                }
            }
        };
        let initial: Vec<f64> = self
            .initial
            .clone()
            .unwrap_or_else(|| self.theta.free_values())
            .iter()
            .map(|v| v.ln())
            .collect();
        let run = multistart(&objective, Some(&initial), &lo, &hi, &self.optimizer);
        if !run.best.f.is_finite() {
            return Err(Error::Estimation(format!(
                "all {} starts failed to produce a finite contrast",
                run.starts
            )));
        }
        let free: Vec<f64> = run.best.x.iter().map(|v| v.exp()).collect();
        let theta_hat = self.theta.with_free_values(&free);
        let mut diag = Diagnostics::new(
            if self.log_det_correction { "ce" } else { "ce-uncorrected" },
            self.population,
            self.obs.n(),
        );
        diag.converged = run.best.converged;
        diag.iterations = run.total_iterations;
        diag.evaluations = run.total_evals;
        diag.starts = run.starts;
        diag.restarts = run.restarts;
        diag.converged_starts = run.converged_starts;
        diag.failed_evaluations = failures.load(Ordering::Relaxed);
        diag.gradient_norm = self
            .gradient(&theta_hat)
            .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
            .unwrap_or(f64::NAN);
        for (k, &i) in theta_hat.free_indices().iter().enumerate() {
            if (run.best.x[k] - lo[k]).abs() < 1e-6 || (run.best.x[k] - hi[k]).abs() < 1e-6 {
                diag.notes.push(format!("{} at its bound", theta_hat.names[i]));
            }
        }
        let info = match self.information_matrix(&theta_hat) {
            Ok(info) => info,
            Err(e) => {
                diag.notes.push(format!("information matrix unavailable: {e}"));
                InformationMatrix {
                    names: theta_hat.free_names(),
                    matrix: vec![0.0; m * m],
                    rank: 0,
                    condition: f64::INFINITY,
                }
            }
        };
        Ok(EstimationReport::assemble(theta_hat, run.best.f, &info, self.level, diag))
    }

    /// Re-analyzes the same counts as if the population were
    /// `population`. The initial condition becomes the first observation
    /// (the declared one is in the wrong units). For SIR the transmission
    /// term scales with the assumed population, so `R̂0` estimates
    /// `R0 · N′/N` while `d̂` is unaffected.
    pub fn mis_specified_n(&self, population: u64) -> Result<EstimationReport> {
        let obs = self.obs.renormalized(population)?;
        let mut ctx = self.clone();
        ctx.obs = obs;
        ctx.population = population as f64;
        ctx.x0 = X0Policy::FirstObservation;
        let mut report = ctx.minimize()?;
        let factor = population as f64 / self.obs.population as f64;
        report.diagnostics.estimator = "ce-misspecified-n".into();
        report.diagnostics.notes.push(format!(
            "data normalized by N' = {population} instead of N = {}; expected R0 factor N'/N = {factor}",
            self.obs.population
        ));
        Ok(report)
    }
}

/// `I(n, θ)` on the grid `times` for a flow started at `x0`. Only the
/// observation times matter, not the observed values.
pub fn information_matrix(
    table: &TransitionTable,
    theta: &ParamVector,
    x0: &[f64],
    times: &[f64],
    max_step: f64,
) -> Result<InformationMatrix> {
    let flow = FlowCache::build(table, theta, x0, times, FlowOptions::new(max_step).with_sensitivities())?;
    let p = table.dim();
    let m = flow.free.len();
    let mut info = vec![0.0; m * m];
    let mut carried = vec![0.0; p * m];
    for k in 1..=flow.n_intervals() {
        let chol = Cholesky::factor_pd(flow.weight_matrix(k), p)?;
        let s_prev = flow.sensitivity(k - 1).expect("sensitivities requested");
        let s_cur = flow.sensitivity(k).expect("sensitivities requested");
        matmul(flow.interval_resolvent(k), s_prev, p, p, m, &mut carried);
        let d: Vec<f64> = (0..p * m).map(|i| carried[i] - s_cur[i]).collect();
        // Columns of S_k⁻¹ D_k.
        let mut solved = vec![0.0; p * m];
        for c in 0..m {
            let mut col: Vec<f64> = (0..p).map(|i| d[i * m + c]).collect();
            chol.solve_in_place(&mut col);
            for i in 0..p {
                solved[i * m + c] = col[i];
            }
        }
        let w = 1.0 / flow.delta(k);
        for a in 0..m {
            for b in 0..m {
                let v: f64 = (0..p).map(|i| d[i * m + a] * solved[i * m + b]).sum();
                info[a * m + b] += w * v;
            }
        }
    }
    for a in 0..m {
        for b in (a + 1)..m {
            let v = 0.5 * (info[a * m + b] + info[b * m + a]);
            info[a * m + b] = v;
            info[b * m + a] = v;
        }
    }
    Ok(InformationMatrix {
        names: theta.free_names(),
        rank: sym_rank(&info, m, 1e-10),
        condition: sym_condition(&info, m),
        matrix: info,
    })
}
