//! Bounded Nelder-Mead with Latin-square multistarts.

use std::cell::Cell;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::simulate::StreamSeed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSettings {
    /// Latin-square starting points (in addition to `initial`, if given).
    pub multistarts: usize,
    /// Evaluation cap per local search.
    pub max_evals: usize,
    /// Simplex diameter tolerance (search coordinates).
    pub xtol: f64,
    /// Spread of simplex values tolerance, relative to `1 + |f|`.
    pub ftol: f64,
    /// Fresh-simplex restarts from the best point.
    pub restarts: usize,
    /// Initial simplex edge as a fraction of the search box width.
    pub initial_step: f64,
    pub seed: u64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            multistarts: 5,
            max_evals: 2000,
            xtol: 1e-8,
            ftol: 1e-8,
            restarts: 1,
            initial_step: 0.05,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Small evaluation cache keyed on the search point (max-norm tolerance
/// `1e-12`). Shrink steps and restarts revisit points often.
struct Memo {
    entries: Vec<(Vec<f64>, f64)>,
    next: usize,
}

const MEMO_SLOTS: usize = 8;
const MEMO_TOL: f64 = 1e-12;

impl Memo {
    fn new() -> Self {
        Self {
            entries: Vec::with_capacity(MEMO_SLOTS),
            next: 0,
        }
    }

    fn get(&self, x: &[f64]) -> Option<f64> {
        self.entries
            .iter()
            .find(|(k, _)| k.iter().zip(x).all(|(a, b)| (a - b).abs() <= MEMO_TOL))
            .map(|e| e.1)
    }

    fn put(&mut self, x: &[f64], f: f64) {
        if self.entries.len() < MEMO_SLOTS {
            self.entries.push((x.to_vec(), f));
        } else {
            self.entries[self.next] = (x.to_vec(), f);
        }
        self.next = (self.next + 1) % MEMO_SLOTS;
    }
}

fn clamp_into(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Nelder-Mead on the box `[lo, hi]` (points are clamped into it).
/// Non-finite objective values count as `+∞`.
pub fn nelder_mead<F>(f: &F, x0: &[f64], lo: &[f64], hi: &[f64], settings: &OptimizerSettings) -> LocalResult
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let n = x0.len();
    let mut memo = Memo::new();
    let evals = Cell::new(0usize);
    let mut eval = |x: &[f64]| -> f64 {
        if let Some(v) = memo.get(x) {
            return v;
        }
        evals.set(evals.get() + 1);
        let v = f(x);
        let v = if v.is_finite() { v } else { f64::INFINITY };
        memo.put(x, v);
        v
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut start = x0.to_vec();
    clamp_into(&mut start, lo, hi);
    simplex.push(start.clone());
    for i in 0..n {
        let mut v = start.clone();
        let step = settings.initial_step * (hi[i] - lo[i]);
        // Step away from the nearer wall.
        v[i] = if v[i] + step <= hi[i] { v[i] + step } else { v[i] - step };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();
    let mut iterations = 0;
    let mut converged = false;

    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];
    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&k| simplex[k].clone()).collect();
        values = order.iter().map(|&k| values[k]).collect();

        let diameter = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let spread = values[n] - values[0];
        if values[0].is_finite() && diameter <= settings.xtol && spread <= settings.ftol * (1.0 + values[0].abs())
        {
            converged = true;
            break;
        }
        // Memo hits do not count as evaluations, so iterations are capped too.
        // A collapsed simplex with no finite value cannot make progress.
        if evals.get() >= settings.max_evals
            || iterations >= settings.max_evals
            || (!values[0].is_finite() && diameter <= settings.xtol)
        {
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for v in &simplex[..n] {
            for i in 0..n {
                centroid[i] += v[i] / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let along = |coef: f64, out: &mut [f64]| {
            for i in 0..n {
                out[i] = centroid[i] + coef * (centroid[i] - worst[i]);
            }
            clamp_into(out, lo, hi);
        };

        along(1.0, &mut trial);
        let fr = eval(&trial);
        if fr < values[0] {
            along(2.0, &mut trial2);
            let fe = eval(&trial2);
            if fe < fr {
                simplex[n].copy_from_slice(&trial2);
                values[n] = fe;
            } else {
                simplex[n].copy_from_slice(&trial);
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n].copy_from_slice(&trial);
            values[n] = fr;
            continue;
        }
        // Outside or inside contraction.
        let (coef, reference) = if fr < values[n] { (0.5, fr) } else { (-0.5, values[n]) };
        along(coef, &mut trial2);
        let fc = eval(&trial2);
        if fc < reference {
            simplex[n].copy_from_slice(&trial2);
            values[n] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for k in 1..=n {
            for i in 0..n {
                simplex[k][i] = best[i] + 0.5 * (simplex[k][i] - best[i]);
            }
            values[k] = eval(&simplex[k]);
        }
    }
    LocalResult {
        x: simplex[0].clone(),
        f: values[0],
        evals: evals.get(),
        iterations,
        converged,
    }
}

/// `k` points of a Latin square over `[lo, hi]`.
pub fn latin_square(k: usize, lo: &[f64], hi: &[f64], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = StreamSeed::new(seed, u64::MAX).rng();
    let dim = lo.len();
    let mut points = vec![vec![0.0; dim]; k];
    for i in 0..dim {
        let mut strata: Vec<usize> = (0..k).collect();
        strata.shuffle(&mut rng);
        for (p, &s) in points.iter_mut().zip(&strata) {
            let u = (s as f64 + rng.gen::<f64>()) / k as f64;
            p[i] = lo[i] + u * (hi[i] - lo[i]);
        }
    }
    points
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultistartResult {
    pub best: LocalResult,
    pub starts: usize,
    pub restarts: usize,
    pub total_evals: usize,
    pub total_iterations: usize,
    /// Starts whose local search met the tolerances.
    pub converged_starts: usize,
}

/// Runs a local search from `initial` (if any) and from each Latin-square
/// point, keeps the best, then restarts from it with a fresh simplex.
pub fn multistart<F>(
    f: &F,
    initial: Option<&[f64]>,
    lo: &[f64],
    hi: &[f64],
    settings: &OptimizerSettings,
) -> MultistartResult
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    let mut starts = latin_square(settings.multistarts, lo, hi, settings.seed);
    if let Some(x) = initial {
        starts.insert(0, x.to_vec());
    }
    let results: Vec<LocalResult> = starts
        .par_iter()
        .map(|x0| nelder_mead(f, x0, lo, hi, settings))
        .collect();
    let mut total_evals: usize = results.iter().map(|r| r.evals).sum();
    let mut total_iterations: usize = results.iter().map(|r| r.iterations).sum();
    let mut converged_starts = results.iter().filter(|r| r.converged).count();
    let mut best = results
        .into_iter()
        .min_by(|a, b| a.f.total_cmp(&b.f))
        .expect("at least one start");
    let mut restarts = 0;
    for _ in 0..settings.restarts {
        if !best.f.is_finite() {
            break;
        }
        let again = nelder_mead(f, &best.x, lo, hi, settings);
        restarts += 1;
        total_evals += again.evals;
        total_iterations += again.iterations;
        if again.converged {
            converged_starts += 1;
        }
        let improved = again.f <= best.f;
        let converged = again.converged;
        if improved {
            best = again;
        }
        best.converged = converged || (best.converged && !improved);
    }
    MultistartResult {
        best,
        starts: starts.len(),
        restarts,
        total_evals,
        total_iterations,
        converged_starts,
    }
}
