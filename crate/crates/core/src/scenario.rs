//! Replicate farms: scenario configuration, simulation of many trajectories,
//! estimation on several observation grids, and aggregation into the tables
//! consumed by the plotting tools.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrast::{
    information_matrix, normal_two_sided, ContrastContext, Ellipse, EstimationReport, OptimizerSettings, X0Policy,
};
use crate::error::{Error, Result};
use crate::linalg::{inverse, Cholesky};
use crate::mle::{sir_mle, CompletePath};
use crate::model::{ParamVector, TransitionTable};
use crate::models::{default_params, reparam_by_id, select_horizon, table_by_id, SIRS_ID, SIR_ID};
use crate::odeflow::information_bound;
use crate::simulate::{
    euler_maruyama, gillespie, io, non_extinct, ode_path, regular_grid, sample_at, tau_leap, Path, Scheme,
    StreamSeed, TauLeapController,
};
use crate::stats;

pub const SCHEMA_VERSION: u32 = 1;

/// Vertices per ellipse in the ellipse table.
pub const ELLIPSE_POINTS: usize = 100;

/// One observation grid: `n` regular intervals on `[0, T]`, a fixed `step`,
/// or explicit `times`. Exactly one must be given.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    /// Column value in output tables; defaults to the number of intervals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl GridSpec {
    pub fn regular(n: usize) -> Self {
        Self { n: Some(n), ..Self::default() }
    }

    pub fn every(step: f64, label: &str) -> Self {
        Self { step: Some(step), label: Some(label.into()), ..Self::default() }
    }

    pub fn times(&self, horizon: f64) -> Result<Vec<f64>> {
        match (self.n, self.step, &self.times) {
            (Some(n), None, None) if n > 0 => Ok(regular_grid(0.0, horizon, n)),
            (None, Some(step), None) if step > 0.0 => {
                let count = (horizon / step + 1e-9).floor() as usize;
                Ok((0..=count).map(|k| k as f64 * step).collect())
            }
            (None, None, Some(t)) if t.len() >= 2 => Ok(t.clone()),
            _ => Err(Error::Config(
                "grid needs exactly one of `n` (> 0), `step` (> 0) or `times` (at least 2)".into(),
            )),
        }
    }

    pub fn label(&self, horizon: f64) -> Result<String> {
        if let Some(l) = &self.label {
            return Ok(l.clone());
        }
        Ok((self.times(horizon)?.len() - 1).to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum X0Choice {
    /// The configured initial proportions.
    #[default]
    Known,
    FirstObservation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorOptions {
    pub contrast: bool,
    /// Complete-data MLE on exact SIR paths.
    pub mle: bool,
    pub log_det_correction: bool,
    pub x0_policy: X0Choice,
    /// Also fit with counts normalized by this population.
    pub assumed_population: Option<u64>,
    pub level: f64,
    /// Add the true parameter to the starting points.
    pub start_at_truth: bool,
    pub optimizer: OptimizerSettings,
    /// Fraction of failed fits above which the run is reported as failed.
    pub failure_threshold: f64,
    pub max_step: Option<f64>,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            contrast: true,
            mle: true,
            log_det_correction: true,
            x0_policy: X0Choice::Known,
            assumed_population: None,
            level: 0.95,
            start_at_truth: true,
            optimizer: OptimizerSettings::default(),
            failure_threshold: 0.1,
            max_step: None,
        }
    }
}

fn default_replicates() -> usize {
    200
}

fn default_schemes() -> Vec<Scheme> {
    vec![Scheme::Exact]
}

fn default_threshold() -> f64 {
    0.01
}

fn default_dt() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    pub model: String,
    /// True parameter in estimation coordinates; fixed parameters not listed
    /// take the model defaults.
    pub params: BTreeMap<String, f64>,
    pub population: u64,
    /// Initial proportions.
    pub x0: Vec<f64>,
    /// Observation horizon; when absent, the time the ODE infected
    /// proportion falls below `horizon_threshold` after the peak.
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default = "default_threshold")]
    pub horizon_threshold: f64,
    pub grids: Vec<GridSpec>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub estimator: EstimatorOptions,
    /// Euler-Maruyama step for the diffusion scheme, and the record spacing
    /// of ODE paths.
    #[serde(default = "default_dt")]
    pub diffusion_dt: f64,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let table = table_by_id(&self.model)?;
        if self.x0.len() != table.dim() {
            return Err(Error::Config(format!("x0 must have {} entries", table.dim())));
        }
        if self.population == 0 {
            return Err(Error::Config("population must be positive".into()));
        }
        if self.grids.is_empty() && (self.estimator.contrast || self.estimator.mle) {
            return Err(Error::Config("at least one grid is needed".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("at least one scheme is needed".into()));
        }
        if !(self.diffusion_dt > 0.0) {
            return Err(Error::Config("diffusion_dt must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.estimator.failure_threshold) {
            return Err(Error::Config("failure_threshold must lie in [0, 1]".into()));
        }
        if !(self.estimator.level > 0.0 && self.estimator.level < 1.0) {
            return Err(Error::Config("level must lie in (0, 1)".into()));
        }
        self.truth()?;
        let horizon = self.resolve_horizon()?;
        for g in &self.grids {
            let t = g.times(horizon)?;
            if t[0] != 0.0 || t.windows(2).any(|w| w[1] <= w[0]) || *t.last().unwrap() > horizon + 1e-9 {
                return Err(Error::Config("grid times must start at 0, increase, and end by the horizon".into()));
            }
        }
        Ok(())
    }

    pub fn table(&self) -> Result<TransitionTable> {
        table_by_id(&self.model)
    }

    /// The true parameter vector.
    pub fn truth(&self) -> Result<ParamVector> {
        let names = reparam_by_id(&self.model)?.estimation_names();
        for key in self.params.keys() {
            if !names.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown parameter `{key}` for model `{}`", self.model)));
            }
        }
        let required = match self.model.as_str() {
            SIR_ID => 2,
            _ => 4,
        };
        let mut est = Vec::with_capacity(names.len());
        for name in &names[..required] {
            let v = self
                .params
                .get(*name)
                .ok_or_else(|| Error::Config(format!("parameter `{name}` is required")))?;
            est.push(*v);
        }
        let mut theta = default_params(&self.model, &est)?;
        for name in &names[required..] {
            if let Some(v) = self.params.get(*name) {
                theta.set(name, *v)?;
            }
        }
        theta.validate()?;
        Ok(theta)
    }

    pub fn resolve_horizon(&self) -> Result<f64> {
        match self.horizon {
            Some(h) if h > 0.0 => Ok(h),
            Some(h) => Err(Error::Config(format!("horizon {h} must be positive"))),
            None => select_horizon(&self.table()?, &self.truth()?, &self.x0, self.horizon_threshold, 10_000.0),
        }
    }

    fn max_step(&self, table: &TransitionTable) -> f64 {
        self.estimator.max_step.unwrap_or_else(|| crate::contrast::default_max_step(table))
    }

    /// Initial counts `round(N x0)`.
    pub fn initial_counts(&self) -> Vec<i64> {
        let n = self.population as f64;
        self.x0.iter().map(|v| (v * n).round() as i64).collect()
    }
}

fn scheme_stream(scheme: Scheme, replicate: usize) -> u64 {
    let code = match scheme {
        Scheme::Exact => 0u64,
        Scheme::TauLeap => 1,
        Scheme::Diffusion => 2,
        Scheme::Ode => 3,
    };
    (code << 48) | replicate as u64
}

/// One trajectory of the farm.
pub fn simulate_replicate(cfg: &ScenarioConfig, scheme: Scheme, replicate: usize) -> Result<Path> {
    let table = cfg.table()?;
    let theta = cfg.truth()?;
    let horizon = cfg.resolve_horizon()?;
    simulate_with(cfg, &table, &theta, horizon, scheme, replicate)
}

fn simulate_with(
    cfg: &ScenarioConfig,
    table: &TransitionTable,
    theta: &ParamVector,
    horizon: f64,
    scheme: Scheme,
    replicate: usize,
) -> Result<Path> {
    let seed = StreamSeed::new(cfg.seed, scheme_stream(scheme, replicate));
    match scheme {
        Scheme::Exact => gillespie(table, theta, cfg.population, &cfg.initial_counts(), horizon, seed),
        Scheme::TauLeap => tau_leap(
            table,
            theta,
            cfg.population,
            &cfg.initial_counts(),
            horizon,
            TauLeapController::default(),
            seed,
        ),
        Scheme::Diffusion => {
            euler_maruyama(table, theta, cfg.population as f64, &cfg.x0, horizon, cfg.diffusion_dt, seed)
        }
        Scheme::Ode => {
            let n = (horizon / cfg.diffusion_dt).ceil().max(1.0) as usize;
            ode_path(table, theta, cfg.population, &cfg.x0, &regular_grid(0.0, horizon, n), cfg.max_step(table))
        }
    }
}

#[derive(Debug, Clone)]
pub struct Replicate {
    pub index: usize,
    pub scheme: Scheme,
    pub path: Path,
    /// Minor outbreak (or fade-out) excluded from the analysis.
    pub excluded: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Ensemble {
    pub horizon: f64,
    pub replicates: Vec<Replicate>,
}

impl Ensemble {
    pub fn analyzed(&self, scheme: Scheme) -> impl Iterator<Item = &Replicate> {
        self.replicates.iter().filter(move |r| r.scheme == scheme && !r.excluded)
    }
}

/// Simulates every scheme and replicate. Results are ordered by scheme then
/// replicate index whatever the thread schedule.
pub fn simulate_ensemble(cfg: &ScenarioConfig) -> Result<Ensemble> {
    let table = cfg.table()?;
    let theta = cfg.truth()?;
    let horizon = cfg.resolve_horizon()?;
    let mut replicates = Vec::with_capacity(cfg.replicates * cfg.schemes.len());
    for &scheme in &cfg.schemes {
        let batch: Result<Vec<Replicate>> = (0..cfg.replicates)
            .into_par_iter()
            .map(|r| {
                let path = simulate_with(cfg, &table, &theta, horizon, scheme, r)?;
                let excluded = scheme != Scheme::Ode && !non_extinct(&path);
                Ok(Replicate { index: r, scheme, path, excluded })
            })
            .collect();
        replicates.extend(batch?);
    }
    Ok(Ensemble { horizon, replicates })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub scheme: Scheme,
    pub replicate: usize,
    pub seed: StreamSeed,
    pub file: String,
    pub excluded: bool,
    pub absorbed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeCounts {
    pub scheme: Scheme,
    pub total: usize,
    pub analyzed: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ScenarioConfig,
    pub horizon: f64,
    pub counts: Vec<SchemeCounts>,
    pub paths: Vec<ManifestEntry>,
}

pub fn scheme_counts(cfg: &ScenarioConfig, ensemble: &Ensemble) -> Vec<SchemeCounts> {
    cfg.schemes
        .iter()
        .map(|&scheme| {
            let all: Vec<&Replicate> = ensemble.replicates.iter().filter(|r| r.scheme == scheme).collect();
            let excluded = all.iter().filter(|r| r.excluded).count();
            SchemeCounts { scheme, total: all.len(), analyzed: all.len() - excluded, excluded }
        })
        .collect()
}

/// Writes each path as CSV under `out/paths/<scheme>/` plus `manifest.json`.
pub fn write_ensemble(cfg: &ScenarioConfig, ensemble: &Ensemble, out: &FsPath) -> Result<Manifest> {
    let compartments = cfg.table()?.compartments;
    let mut entries = Vec::with_capacity(ensemble.replicates.len());
    for rep in &ensemble.replicates {
        let rel = format!("paths/{}/rep_{:05}.csv", rep.scheme.as_str(), rep.index);
        let file = out.join(&rel);
        fs::create_dir_all(file.parent().expect("joined path has a parent"))?;
        io::write_csv(&rep.path, &compartments, BufWriter::new(File::create(&file)?))?;
        entries.push(ManifestEntry {
            scheme: rep.scheme,
            replicate: rep.index,
            seed: rep.path.seed,
            file: rel,
            excluded: rep.excluded,
            absorbed: rep.path.absorbed,
        });
    }
    let manifest = Manifest {
        config: cfg.clone(),
        horizon: ensemble.horizon,
        counts: scheme_counts(cfg, ensemble),
        paths: entries,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Reloads an ensemble written by [`write_ensemble`].
pub fn read_ensemble(dir: &FsPath) -> Result<(Manifest, Ensemble)> {
    let manifest: Manifest = serde_json::from_reader(File::open(dir.join("manifest.json"))?)?;
    let mut replicates = Vec::with_capacity(manifest.paths.len());
    for e in &manifest.paths {
        let (path, _) = io::read_csv(File::open(dir.join(&e.file))?)?;
        replicates.push(Replicate { index: e.replicate, scheme: e.scheme, path, excluded: e.excluded });
    }
    let horizon = manifest.horizon;
    Ok((manifest, Ensemble { horizon, replicates }))
}

/// Covariances at the true parameter, per grid label, plus the
/// continuous-observation bound under the key `"inf"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theory {
    pub names: Vec<String>,
    pub truth: Vec<f64>,
    pub population: f64,
    pub grids: Vec<TheoryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryEntry {
    pub label: String,
    /// Estimator the covariance describes: `ce` on a grid, `mle` or
    /// `asymptotic` for continuous observation.
    pub estimator: String,
    pub info: Vec<f64>,
    pub cov: Option<Vec<f64>>,
}

impl Theory {
    pub fn entry(&self, label: &str) -> Option<&TheoryEntry> {
        self.grids.iter().find(|e| e.label == label)
    }

    pub fn bound(&self) -> Option<&TheoryEntry> {
        self.entry("inf")
    }
}

pub fn theory(cfg: &ScenarioConfig) -> Result<Theory> {
    let table = cfg.table()?;
    let theta = cfg.truth()?;
    let horizon = cfg.resolve_horizon()?;
    let step = cfg.max_step(&table);
    let n = cfg.population as f64;
    let m = theta.free_indices().len();
    let mut grids = Vec::with_capacity(cfg.grids.len() + 1);
    for g in &cfg.grids {
        let info = information_matrix(&table, &theta, &cfg.x0, &g.times(horizon)?, step)?;
        grids.push(TheoryEntry {
            label: g.label(horizon)?,
            estimator: "ce".into(),
            cov: info.covariance(n),
            info: info.matrix,
        });
    }
    let bound = information_bound(&table, &theta, &cfg.x0, 0.0, horizon, step)?;
    let cov = inverse(&bound, m).map(|c| c.iter().map(|v| v / n).collect());
    grids.push(TheoryEntry {
        label: "inf".into(),
        estimator: if cfg.model == SIR_ID { "mle".into() } else { "asymptotic".into() },
        info: bound,
        cov,
    });
    Ok(Theory { names: theta.free_names(), truth: theta.free_values(), population: n, grids })
}

/// Outcome of one fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord {
    pub scheme: Scheme,
    pub replicate: usize,
    pub grid: String,
    pub estimator: String,
    pub report: Option<EstimationReport>,
    pub error: Option<String>,
}

fn fit_grid(
    cfg: &ScenarioConfig,
    table: &TransitionTable,
    truth: &ParamVector,
    rep: &Replicate,
    times: &[f64],
    label: &str,
) -> Vec<FitRecord> {
    let opts = &cfg.estimator;
    let record = |estimator: &str, r: Result<EstimationReport>| {
        let (report, error) = match r {
            Ok(rep) => (Some(rep), None),
            Err(e) => (None, Some(e.to_string())),
        };
        FitRecord {
            scheme: rep.scheme,
            replicate: rep.index,
            grid: label.to_string(),
            estimator: estimator.to_string(),
            report,
            error,
        }
    };
    let corrected = if opts.log_det_correction { "ce" } else { "ce-uncorrected" };
    let ctx = (|| {
        let obs = sample_at(&rep.path, times)?;
        let x0 = match opts.x0_policy {
            X0Choice::Known => X0Policy::Known(cfg.x0.clone()),
            X0Choice::FirstObservation => X0Policy::FirstObservation,
        };
        let mut ctx = ContrastContext::new(table.clone(), obs, cfg.population as f64, x0, truth.clone())?;
        ctx.max_step = cfg.max_step(table);
        ctx.log_det_correction = opts.log_det_correction;
        ctx.optimizer = opts.optimizer.clone();
        ctx.level = opts.level;
        // Without a truth start the search begins from the box midpoint (in
        // log coordinates).
        if !opts.start_at_truth {
            let mid: Vec<f64> = truth
                .free_indices()
                .iter()
                .map(|&i| (truth.lower[i].max(1e-12) * truth.upper[i]).sqrt())
                .collect();
            ctx.initial = Some(mid);
        }
        Ok::<_, Error>(ctx)
    })();
    let ctx = match ctx {
        Ok(c) => c,
        Err(e) => return vec![record(corrected, Err(e))],
    };
    let mut out = vec![record(corrected, ctx.minimize())];
    if let Some(assumed) = opts.assumed_population {
        out.push(record("ce-misspecified-n", ctx.mis_specified_n(assumed)));
    }
    out
}

/// Fits every analyzed replicate on every grid.
pub fn estimate_ensemble(cfg: &ScenarioConfig, ensemble: &Ensemble) -> Result<Vec<FitRecord>> {
    let table = cfg.table()?;
    let truth = cfg.truth()?;
    let horizon = ensemble.horizon;
    let grids: Vec<(String, Vec<f64>)> = cfg
        .grids
        .iter()
        .map(|g| Ok((g.label(horizon)?, g.times(horizon)?)))
        .collect::<Result<_>>()?;
    let analyzed: Vec<&Replicate> = ensemble.replicates.iter().filter(|r| !r.excluded).collect();
    let records: Vec<Vec<FitRecord>> = analyzed
        .par_iter()
        .map(|rep| {
            let mut out = Vec::new();
            if cfg.estimator.contrast {
                for (label, times) in &grids {
                    out.extend(fit_grid(cfg, &table, &truth, rep, times, label));
                }
            }
            if cfg.estimator.mle && rep.scheme == Scheme::Exact && cfg.model == SIR_ID {
                let r = CompletePath::from_path(&rep.path)
                    .and_then(|cp| sir_mle(&cp))
                    .and_then(|m| m.report(cfg.estimator.level));
                let (report, error) = match r {
                    Ok(rep) => (Some(rep), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                out.push(FitRecord {
                    scheme: rep.scheme,
                    replicate: rep.index,
                    grid: "complete".into(),
                    estimator: "mle".into(),
                    report,
                    error,
                });
            }
            out
        })
        .collect();
    Ok(records.into_iter().flatten().collect())
}

/// Summary of one parameter within one (scheme, grid, estimator) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scenario: String,
    pub scheme: Scheme,
    pub n: String,
    pub estimator: String,
    pub param: String,
    pub truth: f64,
    pub mean: f64,
    pub sd: f64,
    /// Empirical percentile interval of the estimates.
    pub ci_emp_lo: f64,
    pub ci_emp_hi: f64,
    /// Interval from the theoretical covariance at the true parameter.
    pub ci_th_lo: f64,
    pub ci_th_hi: f64,
    /// Share of fits whose estimate lies in the theoretical interval.
    pub coverage: f64,
    /// Share of fits inside the joint theoretical ellipsoid.
    pub joint_coverage: f64,
    pub analyzed: usize,
    pub failed: usize,
}

impl AggregateRow {
    pub const HEADER: [&'static str; 16] = [
        "scenario",
        "scheme",
        "n",
        "estimator",
        "param",
        "truth",
        "mean",
        "sd",
        "ci_emp_lo",
        "ci_emp_hi",
        "ci_th_lo",
        "ci_th_hi",
        "coverage",
        "joint_coverage",
        "analyzed",
        "failed",
    ];

    fn record(&self) -> Vec<String> {
        vec![
            self.scenario.clone(),
            self.scheme.as_str().into(),
            self.n.clone(),
            self.estimator.clone(),
            self.param.clone(),
            self.truth.to_string(),
            self.mean.to_string(),
            self.sd.to_string(),
            self.ci_emp_lo.to_string(),
            self.ci_emp_hi.to_string(),
            self.ci_th_lo.to_string(),
            self.ci_th_hi.to_string(),
            self.coverage.to_string(),
            self.joint_coverage.to_string(),
            self.analyzed.to_string(),
            self.failed.to_string(),
        ]
    }

    pub fn width_th(&self) -> f64 {
        self.ci_th_hi - self.ci_th_lo
    }
}

/// Chi-square quantile with `k` degrees of freedom.
fn chi2_quantile(level: f64, k: usize) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    ChiSquared::new(k as f64).expect("positive dof").inverse_cdf(level)
}

pub fn aggregate(cfg: &ScenarioConfig, fits: &[FitRecord], theory: &Theory) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(Scheme, String, String), Vec<&FitRecord>> = BTreeMap::new();
    for f in fits {
        groups.entry((f.scheme, f.grid.clone(), f.estimator.clone())).or_default().push(f);
    }
    let z = normal_two_sided(cfg.estimator.level);
    let m = theory.names.len();
    let mut rows = Vec::new();
    for ((scheme, grid, estimator), recs) in groups {
        let ok: Vec<&EstimationReport> = recs.iter().filter_map(|r| r.report.as_ref()).collect();
        let failed = recs.len() - ok.len();
        let entry = if estimator == "mle" { theory.bound() } else { theory.entry(&grid) };
        let cov = entry.and_then(|e| e.cov.clone());
        let joint = cov
            .as_ref()
            .and_then(|c| Cholesky::factor_pd(c, m).ok())
            .map(|chol| {
                let q = chi2_quantile(cfg.estimator.level, m);
                let inside = ok
                    .iter()
                    .filter(|r| {
                        let d: Vec<f64> =
                            r.theta_hat.free_values().iter().zip(&theory.truth).map(|(a, b)| a - b).collect();
                        chol.quad_form(&d) <= q
                    })
                    .count();
                inside as f64 / ok.len().max(1) as f64
            })
            .unwrap_or(f64::NAN);
        for (k, name) in theory.names.iter().enumerate() {
            let xs: Vec<f64> = ok.iter().filter_map(|r| r.estimate(name)).collect();
            let truth = theory.truth[k];
            let half = cov.as_ref().map(|c| z * c[k * m + k].sqrt()).unwrap_or(f64::NAN);
            let coverage = xs.iter().filter(|x| (*x - truth).abs() <= half).count() as f64 / xs.len().max(1) as f64;
            rows.push(AggregateRow {
                scenario: cfg.name.clone(),
                scheme,
                n: grid.clone(),
                estimator: estimator.clone(),
                param: name.clone(),
                truth,
                mean: if xs.is_empty() { f64::NAN } else { stats::mean(&xs) },
                sd: stats::std_dev(&xs),
                ci_emp_lo: stats::percentile(&xs, (1.0 - cfg.estimator.level) / 2.0),
                ci_emp_hi: stats::percentile(&xs, (1.0 + cfg.estimator.level) / 2.0),
                ci_th_lo: truth - half,
                ci_th_hi: truth + half,
                coverage: if half.is_finite() { coverage } else { f64::NAN },
                joint_coverage: joint,
                analyzed: ok.len(),
                failed,
            });
        }
    }
    rows
}

/// Theoretical ellipses centered at the truth, one per grid and parameter
/// pair, plus the continuous-observation one.
pub fn theory_ellipses(theory: &Theory, level: f64) -> Result<Vec<(String, String, Ellipse)>> {
    let m = theory.names.len();
    let mut out = Vec::new();
    for e in &theory.grids {
        let Some(cov) = &e.cov else { continue };
        for a in 0..m {
            for b in (a + 1)..m {
                let ell = Ellipse::from_covariance(
                    [theory.names[a].clone(), theory.names[b].clone()],
                    [theory.truth[a], theory.truth[b]],
                    [cov[a * m + a], cov[a * m + b], cov[b * m + a], cov[b * m + b]],
                    level,
                )?;
                out.push((e.label.clone(), e.estimator.clone(), ell));
            }
        }
    }
    Ok(out)
}

pub const ELLIPSE_HEADER: [&str; 8] = ["scenario", "n", "estimator", "param_x", "param_y", "point", "x", "y"];

pub fn write_ellipses<W: Write>(scenario: &str, ellipses: &[(String, String, Ellipse)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ELLIPSE_HEADER)?;
    for (label, estimator, e) in ellipses {
        for (k, p) in e.polyline(ELLIPSE_POINTS, e.center).iter().enumerate() {
            w.write_record([
                scenario,
                label,
                estimator,
                &e.params[0],
                &e.params[1],
                &k.to_string(),
                &p[0].to_string(),
                &p[1].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregate<W: Write>(rows: &[AggregateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AggregateRow::HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

/// Per-fit table: `scenario,scheme,replicate,grid` then the report columns.
pub fn write_fits<W: Write>(scenario: &str, names: &[String], fits: &[FitRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["scenario", "scheme", "replicate", "grid"].iter().map(|s| s.to_string()).collect();
    header.extend(EstimationReport::csv_header(names));
    header.push("error".into());
    w.write_record(&header)?;
    let width = header.len();
    for f in fits {
        let mut row = vec![scenario.to_string(), f.scheme.as_str().into(), f.replicate.to_string(), f.grid.clone()];
        match &f.report {
            Some(r) => row.extend(r.csv_record()),
            None => {
                row.push(f.estimator.clone());
                row.resize(width - 1, String::new());
            }
        }
        row.push(f.error.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &FsPath, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Totals for a finished estimation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub counts: Vec<SchemeCounts>,
    pub fits: usize,
    pub failed_fits: usize,
    pub failure_rate: f64,
    pub failure_threshold: f64,
}

impl RunSummary {
    pub fn exceeds_threshold(&self) -> bool {
        self.failure_rate > self.failure_threshold
    }
}

/// Writes `estimates.csv`, `reports.jsonl`, `aggregate.csv`, `theory.json`,
/// `ellipses.csv` and `summary.json` into `out`.
pub fn write_estimates(
    cfg: &ScenarioConfig,
    ensemble: &Ensemble,
    fits: &[FitRecord],
    out: &FsPath,
) -> Result<RunSummary> {
    fs::create_dir_all(out)?;
    let th = theory(cfg)?;
    write_fits(&cfg.name, &th.names, fits, BufWriter::new(File::create(out.join("estimates.csv"))?))?;
    let mut jl = BufWriter::new(File::create(out.join("reports.jsonl"))?);
    for f in fits {
        serde_json::to_writer(&mut jl, f)?;
        jl.write_all(b"\n")?;
    }
    jl.flush()?;
    let rows = aggregate(cfg, fits, &th);
    write_aggregate(&rows, BufWriter::new(File::create(out.join("aggregate.csv"))?))?;
    write_json(&out.join("theory.json"), &th)?;
    let ellipses = theory_ellipses(&th, cfg.estimator.level)?;
    write_ellipses(&cfg.name, &ellipses, BufWriter::new(File::create(out.join("ellipses.csv"))?))?;
    let failed = fits.iter().filter(|f| f.report.is_none()).count();
    let summary = RunSummary {
        scenario: cfg.name.clone(),
        counts: scheme_counts(cfg, ensemble),
        fits: fits.len(),
        failed_fits: failed,
        failure_rate: failed as f64 / fits.len().max(1) as f64,
        failure_threshold: cfg.estimator.failure_threshold,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Simulate, estimate and write everything for one scenario.
pub fn run_scenario(cfg: &ScenarioConfig, out: &FsPath, keep_paths: bool) -> Result<RunSummary> {
    fs::create_dir_all(out)?;
    let ensemble = simulate_ensemble(cfg)?;
    if keep_paths {
        write_ensemble(cfg, &ensemble, out)?;
    } else {
        let manifest = Manifest {
            config: cfg.clone(),
            horizon: ensemble.horizon,
            counts: scheme_counts(cfg, &ensemble),
            paths: Vec::new(),
        };
        write_json(&out.join("manifest.json"), &manifest)?;
    }
    let fits = estimate_ensemble(cfg, &ensemble)?;
    write_estimates(cfg, &ensemble, &fits, out)
}

/// Named scenario sets reproducing the simulation study.
pub const PRESETS: [&str; 7] = ["fig2", "fig3", "fig4", "fig5", "fig6", "s1", "s2"];

fn sir_config(name: &str, r0: f64, d: f64, horizon: f64, population: u64, grids: Vec<GridSpec>) -> ScenarioConfig {
    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        name: name.into(),
        model: SIR_ID.into(),
        params: BTreeMap::from([("r0".into(), r0), ("d".into(), d)]),
        population,
        x0: vec![0.99, 0.01],
        horizon: Some(horizon),
        horizon_threshold: default_threshold(),
        grids,
        replicates: default_replicates(),
        schemes: vec![Scheme::Exact],
        seed: 0,
        estimator: EstimatorOptions::default(),
        diffusion_dt: default_dt(),
    }
}

fn sirs_config(name: &str, lambda1: f64, population: u64, years: f64, replicates: usize) -> ScenarioConfig {
    let weeks = GridSpec::every(7.0, "weekly");
    let days = GridSpec::every(1.0, "daily");
    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        name: name.into(),
        model: SIRS_ID.into(),
        params: BTreeMap::from([
            ("r0".into(), 1.5),
            ("d".into(), 3.0),
            ("lambda1_x10".into(), lambda1 * 10.0),
            ("inv_delta_tper".into(), 2.0),
        ]),
        population,
        x0: vec![0.7, 1e-4],
        horizon: Some(years * 365.0),
        horizon_threshold: default_threshold(),
        grids: vec![days, weeks],
        replicates,
        schemes: vec![Scheme::TauLeap],
        seed: 0,
        estimator: EstimatorOptions {
            mle: false,
            x0_policy: X0Choice::Known,
            optimizer: OptimizerSettings { multistarts: 2, ..OptimizerSettings::default() },
            ..EstimatorOptions::default()
        },
        diffusion_dt: 0.25,
    }
}

/// Scenarios of a preset. SIRS presets run at a reduced scale (population
/// 1e6, 5 years, 25 replicates) so that they finish on a workstation;
/// every field can be overridden after loading.
pub fn preset(name: &str) -> Result<Vec<ScenarioConfig>> {
    let daily = |t: f64| GridSpec::regular(t as usize);
    let ten = GridSpec::regular(10);
    Ok(match name {
        "fig2" => [(1.5, 3.0, 40.0), (1.5, 7.0, 100.0), (5.0, 3.0, 20.0), (5.0, 7.0, 45.0)]
            .iter()
            .map(|&(r0, d, t)| {
                sir_config(&format!("sir_r{r0}_d{d}_t{t}"), r0, d, t, 1000, vec![daily(t), ten.clone()])
            })
            .collect(),
        "fig3" => vec![sir_config(
            "sir_r1.5_d3_t40_zoom",
            1.5,
            3.0,
            40.0,
            1000,
            vec![GridSpec::regular(40), GridSpec::regular(10), GridSpec::regular(2000)],
        )],
        "fig4" => [400u64, 1000, 10_000]
            .iter()
            .map(|&n| {
                sir_config(
                    &format!("sir_r1.5_d3_n{n}"),
                    1.5,
                    3.0,
                    40.0,
                    n,
                    vec![GridSpec::regular(40), GridSpec::regular(10), GridSpec::regular(5)],
                )
            })
            .collect(),
        "fig5" => [0.05, 0.15]
            .iter()
            .map(|&l1| {
                let mut c = sirs_config(&format!("sirs_traj_l{l1}"), l1, 10_000_000, 20.0, 1);
                c.schemes = vec![Scheme::TauLeap, Scheme::Ode];
                c.estimator.contrast = false;
                c.grids = vec![GridSpec::every(7.0, "weekly")];
                c
            })
            .collect(),
        "fig6" => vec![sirs_config("sirs_l0.15", 0.15, 1_000_000, 5.0, 25)],
        "s1" => vec![sirs_config("sirs_l0.05", 0.05, 1_000_000, 5.0, 25)],
        "s2" => vec![sirs_config("sirs_l0", 0.0, 1_000_000, 5.0, 25)],
        other => return Err(Error::Config(format!("unknown preset `{other}` (known: {})", PRESETS.join(", ")))),
    })
}

/// Output directory of a scenario within a preset run.
pub fn scenario_dir(root: &FsPath, cfg: &ScenarioConfig) -> PathBuf {
    root.join(&cfg.name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        let mut c = sir_config("t", 1.5, 3.0, 40.0, 200, vec![GridSpec::regular(10)]);
        c.replicates = 6;
        c.estimator.optimizer.multistarts = 1;
        c
    }

    #[test]
    fn config_json_round_trip_and_unknown_fields() {
        let c = small();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ScenarioConfig::from_json(&text).unwrap(), c);
        let bad = text.replacen("\"seed\"", "\"sede\"", 1);
        assert!(matches!(ScenarioConfig::from_json(&bad), Err(Error::Config(_))));
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["schema_version"] = 9.into();
        assert!(ScenarioConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let text = r#"{"schema_version":1,"name":"m","model":"sir","params":{"r0":1.5,"d":3},
            "population":1000,"x0":[0.99,0.01],"grids":[{"n":10}]}"#;
        let c = ScenarioConfig::from_json(text).unwrap();
        assert_eq!(c.replicates, 200);
        assert_eq!(c.schemes, vec![Scheme::Exact]);
        // Horizon chosen from the ODE threshold crossing.
        let h = c.resolve_horizon().unwrap();
        assert!(h > 30.0 && h < 60.0, "{h}");
    }

    #[test]
    fn grid_specs() {
        assert_eq!(GridSpec::regular(4).times(2.0).unwrap(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(GridSpec::every(7.0, "w").times(21.5).unwrap().len(), 4);
        assert_eq!(GridSpec::regular(40).label(40.0).unwrap(), "40");
        let both = GridSpec { n: Some(3), step: Some(1.0), ..GridSpec::default() };
        assert!(both.times(10.0).is_err());
    }

    #[test]
    fn unknown_parameter_rejected() {
        let mut c = small();
        c.params.insert("beta".into(), 1.0);
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn ensemble_is_deterministic_and_counts_add_up() {
        let c = small();
        let a = simulate_ensemble(&c).unwrap();
        let b = simulate_ensemble(&c).unwrap();
        assert_eq!(a.replicates.len(), 6);
        for (x, y) in a.replicates.iter().zip(&b.replicates) {
            assert_eq!(x.path, y.path);
        }
        let counts = scheme_counts(&c, &a);
        assert_eq!(counts[0].analyzed + counts[0].excluded, counts[0].total);
        // Distinct streams give distinct paths.
        assert_ne!(a.replicates[0].path.times, a.replicates[1].path.times);
    }

    #[test]
    fn ensemble_written_and_reread() {
        let c = small();
        let e = simulate_ensemble(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = write_ensemble(&c, &e, dir.path()).unwrap();
        assert_eq!(m.paths.len(), 6);
        let (m2, e2) = read_ensemble(dir.path()).unwrap();
        assert_eq!(m, m2);
        for (x, y) in e.replicates.iter().zip(&e2.replicates) {
            assert_eq!(x.path, y.path);
            assert_eq!(x.excluded, y.excluded);
        }
    }

    #[test]
    fn pipeline_writes_tables() {
        let mut c = small();
        c.replicates = 3;
        let dir = tempfile::tempdir().unwrap();
        let s = run_scenario(&c, dir.path(), false).unwrap();
        assert!(s.fits > 0);
        let agg = fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
        assert!(agg.starts_with(&AggregateRow::HEADER.join(",")));
        let ell = fs::read_to_string(dir.path().join("ellipses.csv")).unwrap();
        // Header + 100 points for each of the grid ellipse and the bound.
        assert_eq!(ell.lines().count(), 1 + 2 * ELLIPSE_POINTS);
        let est = fs::read_to_string(dir.path().join("estimates.csv")).unwrap();
        let widths: Vec<usize> = est.lines().map(|l| l.split(',').count()).collect();
        assert!(widths.iter().all(|w| *w == widths[0]));
    }

    #[test]
    fn theory_orders_grids() {
        let mut c = small();
        c.grids = vec![GridSpec::regular(5), GridSpec::regular(40)];
        let th = theory(&c).unwrap();
        let det = |e: &TheoryEntry| {
            let c = e.cov.as_ref().unwrap();
            c[0] * c[3] - c[1] * c[2]
        };
        let (d5, d40, dinf) = (det(th.entry("5").unwrap()), det(th.entry("40").unwrap()), det(th.bound().unwrap()));
        assert!(d5 > d40 && d40 > dinf, "{d5} {d40} {dinf}");
        assert_eq!(th.bound().unwrap().estimator, "mle");
    }

    #[test]
    fn presets_validate() {
        for name in PRESETS {
            for c in preset(name).unwrap() {
                c.validate().unwrap_or_else(|e| panic!("{name}/{}: {e}", c.name));
            }
        }
        assert!(preset("fig9").is_err());
    }
}
