//! Epidemic models as transition tables.
//!
//! A model is a list of jumps `l` with normalized rates `β_l(t, y, θ)`.
//! Everything else (drift, diffusion matrix, its square root, integer-state
//! jump rates) is derived mechanically from the table.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;

/// `β(t, y, θ)`.
pub type RateFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;
/// Writes a gradient of `β` (w.r.t. `y` or `θ`) into the output slice.
pub type GradFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Upper bound of `β(t, y, θ)` over `t ∈ [t0, t1]` at fixed `y`.
pub type MajorantFn = Arc<dyn Fn(f64, f64, &[f64], &[f64]) -> f64 + Send + Sync>;

/// Relative step of the central finite-difference fallback.
pub const FD_REL_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JumpVector(Vec<i64>);

impl JumpVector {
    pub fn new(components: Vec<i64>) -> Result<Self> {
        if components.is_empty() || components.iter().all(|&c| c == 0) {
            return Err(Error::InvalidArgument(
                "jump vector must be nonzero".into(),
            ));
        }
        Ok(Self(components))
    }

    pub fn as_slice(&self) -> &[i64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_abs(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }
}

#[derive(Clone)]
pub struct Transition {
    pub label: String,
    pub jump: JumpVector,
    rate: RateFn,
    grad_state: Option<GradFn>,
    grad_param: Option<GradFn>,
    majorant: Option<MajorantFn>,
}

impl fmt::Debug for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Transition")
            .field("label", &self.label)
            .field("jump", &self.jump)
            .field("analytic_grad_state", &self.grad_state.is_some())
            .field("analytic_grad_param", &self.grad_param.is_some())
            .finish()
    }
}

impl Transition {
    pub fn new(
        label: impl Into<String>,
        jump: Vec<i64>,
        rate: impl Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        Ok(Self {
            label: label.into(),
            jump: JumpVector::new(jump)?,
            rate: Arc::new(rate),
            grad_state: None,
            grad_param: None,
            majorant: None,
        })
    }

    pub fn with_grad_state(
        mut self,
        g: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.grad_state = Some(Arc::new(g));
        self
    }

    pub fn with_grad_param(
        mut self,
        g: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.grad_param = Some(Arc::new(g));
        self
    }

    pub fn with_majorant(
        mut self,
        m: impl Fn(f64, f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.majorant = Some(Arc::new(m));
        self
    }

    /// Drops analytic derivatives so the finite-difference fallback is used.
    pub fn without_analytic_gradients(mut self) -> Self {
        self.grad_state = None;
        self.grad_param = None;
        self
    }

    /// Multiplies the rate (and its derivatives) by a constant.
    pub fn scaled(mut self, c: f64) -> Self {
        let r = self.rate.clone();
        self.rate = Arc::new(move |t, y, th| c * r(t, y, th));
        if let Some(g) = self.grad_state.take() {
            self.grad_state = Some(Arc::new(move |t, y, th, out: &mut [f64]| {
                g(t, y, th, out);
                out.iter_mut().for_each(|v| *v *= c);
            }));
        }
        if let Some(g) = self.grad_param.take() {
            self.grad_param = Some(Arc::new(move |t, y, th, out: &mut [f64]| {
                g(t, y, th, out);
                out.iter_mut().for_each(|v| *v *= c);
            }));
        }
        if let Some(m) = self.majorant.take() {
            self.majorant = Some(Arc::new(move |a, b, y, th| c * m(a, b, y, th)));
        }
        self
    }

    pub fn beta(&self, t: f64, y: &[f64], theta: &[f64]) -> Result<f64> {
        let v = (self.rate)(t, y, theta);
        if v.is_finite() && v >= 0.0 {
            Ok(v)
        } else {
            Err(Error::RateDomain {
                transition: self.label.clone(),
                value: v,
                t,
            })
        }
    }

    /// `∇_y β` into `out` (length p).
    pub fn grad_state(&self, t: f64, y: &[f64], theta: &[f64], out: &mut [f64]) {
        match &self.grad_state {
            Some(g) => g(t, y, theta, out),
            None => {
                let mut yy = y.to_vec();
                for j in 0..y.len() {
                    let h = FD_REL_STEP * y[j].abs().max(1.0);
                    yy[j] = y[j] + h;
                    let up = (self.rate)(t, &yy, theta);
                    yy[j] = y[j] - h;
                    let dn = (self.rate)(t, &yy, theta);
                    yy[j] = y[j];
                    out[j] = (up - dn) / (2.0 * h);
                }
            }
        }
    }

    /// `∇_θ β` into `out` (length = number of parameters).
    pub fn grad_param(&self, t: f64, y: &[f64], theta: &[f64], out: &mut [f64]) {
        match &self.grad_param {
            Some(g) => g(t, y, theta, out),
            None => {
                let mut th = theta.to_vec();
                for j in 0..theta.len() {
                    let h = FD_REL_STEP * theta[j].abs().max(1e-8);
                    th[j] = theta[j] + h;
                    let up = (self.rate)(t, y, &th);
                    th[j] = theta[j] - h;
                    let dn = (self.rate)(t, y, &th);
                    th[j] = theta[j];
                    out[j] = (up - dn) / (2.0 * h);
                }
            }
        }
    }

    /// Bound on the rate over `[t0, t1]` at fixed `y`; falls back to the
    /// value at `t0`, which is exact for time-homogeneous rates only.
    pub fn majorant(&self, t0: f64, t1: f64, y: &[f64], theta: &[f64]) -> f64 {
        match &self.majorant {
            Some(m) => m(t0, t1, y, theta),
            None => (self.rate)(t0, y, theta),
        }
    }
}

/// Named parameter vector with box bounds and a free/fixed mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub free: Vec<bool>,
}

impl ParamVector {
    pub fn new(entries: &[(&str, f64, f64, f64, bool)]) -> Result<Self> {
        let pv = Self {
            names: entries.iter().map(|e| e.0.to_string()).collect(),
            values: entries.iter().map(|e| e.1).collect(),
            lower: entries.iter().map(|e| e.2).collect(),
            upper: entries.iter().map(|e| e.3).collect(),
            free: entries.iter().map(|e| e.4).collect(),
        };
        pv.validate()?;
        Ok(pv)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.names.len();
        if self.values.len() != n
            || self.lower.len() != n
            || self.upper.len() != n
            || self.free.len() != n
        {
            return Err(Error::InvalidArgument("parameter vector length mismatch".into()));
        }
        for i in 0..n {
            let v = self.values[i];
            if !(self.lower[i] <= v && v <= self.upper[i]) {
                return Err(Error::ParamDomain {
                    name: self.names[i].clone(),
                    detail: format!(
                        "value {v} outside [{}, {}]",
                        self.lower[i], self.upper[i]
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.values[i])
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let i = self
            .index(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter `{name}`")))?;
        self.values[i] = value;
        Ok(())
    }

    pub fn set_free(&mut self, name: &str, free: bool) -> Result<()> {
        let i = self
            .index(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter `{name}`")))?;
        self.free[i] = free;
        Ok(())
    }

    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.free[i]).collect()
    }

    pub fn free_names(&self) -> Vec<String> {
        self.free_indices()
            .into_iter()
            .map(|i| self.names[i].clone())
            .collect()
    }

    pub fn free_values(&self) -> Vec<f64> {
        self.free_indices().into_iter().map(|i| self.values[i]).collect()
    }

    /// Copy with the free entries replaced (in `free_indices` order).
    pub fn with_free_values(&self, free_values: &[f64]) -> Self {
        let mut out = self.clone();
        for (k, i) in self.free_indices().into_iter().enumerate() {
            out.values[i] = free_values[k];
        }
        out
    }

    pub fn in_bounds(&self) -> bool {
        (0..self.len()).all(|i| self.lower[i] <= self.values[i] && self.values[i] <= self.upper[i])
    }
}

/// Validated model definition. Immutable once built.
#[derive(Debug, Clone)]
pub struct TransitionTable {
    pub name: String,
    pub compartments: Vec<String>,
    pub transitions: Vec<Transition>,
    pub time_dependent: bool,
    /// Largest admissible `|l_i|`.
    pub max_jump: i64,
    /// Integer states must also satisfy `Σ z_i ≤ N` (the remaining
    /// compartment is implicit), and proportions `Σ y_i ≤ 1`.
    pub simplex: bool,
    /// Coordinate whose vanishing ends the epidemic (diffusion fade-out).
    pub fadeout_coord: Option<usize>,
    /// Transition counted as incidence for cumulative-case bookkeeping.
    pub incidence_transition: Option<usize>,
}

/// Everything the flow integrator needs at one `(t, y)`.
#[derive(Debug, Clone)]
pub struct LocalCoefficients {
    pub drift: Vec<f64>,
    /// `∇_y b`, p×p row-major.
    pub jacobian: Vec<f64>,
    pub diffusion: Vec<f64>,
    /// `∂b/∂θ`, p×m row-major (all parameters), filled only on request.
    pub drift_param: Vec<f64>,
    rates: Vec<f64>,
    grad: Vec<f64>,
}

impl LocalCoefficients {
    pub fn new(p: usize, n_params: usize, n_transitions: usize) -> Self {
        Self {
            drift: vec![0.0; p],
            jacobian: vec![0.0; p * p],
            diffusion: vec![0.0; p * p],
            drift_param: vec![0.0; p * n_params],
            rates: vec![0.0; n_transitions],
            grad: vec![0.0; p.max(n_params)],
        }
    }
}

impl TransitionTable {
    pub fn new(
        name: impl Into<String>,
        compartments: Vec<String>,
        transitions: Vec<Transition>,
        time_dependent: bool,
        max_jump: i64,
    ) -> Result<Self> {
        let p = compartments.len();
        if transitions.is_empty() {
            return Err(Error::InvalidArgument("transition list is empty".into()));
        }
        for tr in &transitions {
            if tr.jump.len() != p {
                return Err(Error::InvalidArgument(format!(
                    "transition `{}` has jump of length {}, expected {p}",
                    tr.label,
                    tr.jump.len()
                )));
            }
            if tr.jump.max_abs() > max_jump {
                return Err(Error::InvalidArgument(format!(
                    "transition `{}` exceeds the jump bound {max_jump}",
                    tr.label
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            compartments,
            transitions,
            time_dependent,
            max_jump,
            simplex: false,
            fadeout_coord: None,
            incidence_transition: None,
        })
    }

    pub fn with_simplex(mut self) -> Self {
        self.simplex = true;
        self
    }

    pub fn with_fadeout(mut self, coord: usize) -> Self {
        self.fadeout_coord = Some(coord);
        self
    }

    pub fn with_incidence(mut self, transition: usize) -> Self {
        self.incidence_transition = Some(transition);
        self
    }

    pub fn dim(&self) -> usize {
        self.compartments.len()
    }

    pub fn rates(&self, t: f64, theta: &ParamVector, y: &[f64]) -> Result<Vec<f64>> {
        self.transitions
            .iter()
            .map(|tr| tr.beta(t, y, &theta.values))
            .collect()
    }

    /// `b(t, θ, y) = Σ_l l β_l(t, y, θ)`.
    pub fn drift(&self, t: f64, theta: &ParamVector, y: &[f64]) -> Result<Vec<f64>> {
        let mut b = vec![0.0; self.dim()];
        for tr in &self.transitions {
            let beta = tr.beta(t, y, &theta.values)?;
            for (bi, &li) in b.iter_mut().zip(tr.jump.as_slice()) {
                *bi += li as f64 * beta;
            }
        }
        Ok(b)
    }

    /// `Σ(t, θ, y) = Σ_l β_l l lᵀ`, p×p row-major.
    pub fn diffusion_matrix(&self, t: f64, theta: &ParamVector, y: &[f64]) -> Result<Vec<f64>> {
        let p = self.dim();
        let mut s = vec![0.0; p * p];
        for tr in &self.transitions {
            let beta = tr.beta(t, y, &theta.values)?;
            let l = tr.jump.as_slice();
            for i in 0..p {
                for j in 0..p {
                    s[i * p + j] += beta * (l[i] * l[j]) as f64;
                }
            }
        }
        Ok(s)
    }

    /// `∇_y b`, p×p row-major.
    pub fn drift_jacobian(&self, t: f64, theta: &ParamVector, y: &[f64]) -> Result<Vec<f64>> {
        let mut c = LocalCoefficients::new(self.dim(), theta.len(), self.transitions.len());
        self.evaluate(t, &theta.values, y, false, &mut c)?;
        Ok(c.jacobian)
    }

    /// `∂b/∂θ`, p×m row-major over all parameters.
    pub fn drift_param_jacobian(
        &self,
        t: f64,
        theta: &ParamVector,
        y: &[f64],
    ) -> Result<Vec<f64>> {
        let mut c = LocalCoefficients::new(self.dim(), theta.len(), self.transitions.len());
        self.evaluate(t, &theta.values, y, true, &mut c)?;
        Ok(c.drift_param)
    }

    /// Fills drift, drift Jacobian, diffusion matrix and (optionally) the
    /// parameter Jacobian of the drift in one sweep over the transitions.
    pub fn evaluate(
        &self,
        t: f64,
        theta: &[f64],
        y: &[f64],
        with_param: bool,
        out: &mut LocalCoefficients,
    ) -> Result<()> {
        let p = self.dim();
        let m = theta.len();
        out.drift.iter_mut().for_each(|v| *v = 0.0);
        out.jacobian.iter_mut().for_each(|v| *v = 0.0);
        out.diffusion.iter_mut().for_each(|v| *v = 0.0);
        if with_param {
            out.drift_param.iter_mut().for_each(|v| *v = 0.0);
        }
        for (k, tr) in self.transitions.iter().enumerate() {
            let beta = tr.beta(t, y, theta)?;
            out.rates[k] = beta;
            let l = tr.jump.as_slice();
            tr.grad_state(t, y, theta, &mut out.grad[..p]);
            for i in 0..p {
                let li = l[i] as f64;
                if li == 0.0 {
                    continue;
                }
                out.drift[i] += li * beta;
                for j in 0..p {
                    out.jacobian[i * p + j] += li * out.grad[j];
                    out.diffusion[i * p + j] += beta * li * l[j] as f64;
                }
            }
            if with_param {
                tr.grad_param(t, y, theta, &mut out.grad[..m]);
                for i in 0..p {
                    let li = l[i] as f64;
                    if li == 0.0 {
                        continue;
                    }
                    for j in 0..m {
                        out.drift_param[i * m + j] += li * out.grad[j];
                    }
                }
            }
        }
        Ok(())
    }

    /// Whether integer state `z` is inside the model's state space.
    pub fn admissible(&self, z: &[i64], population: u64) -> bool {
        let n = population as i64;
        z.iter().all(|&c| (0..=n).contains(&c)) && (!self.simplex || z.iter().sum::<i64>() <= n)
    }

    /// `α_l(t, z) = N β_l(t, z/N, θ)`, zeroed for jumps that would leave the
    /// state space.
    pub fn jump_rates(
        &self,
        t: f64,
        theta: &ParamVector,
        population: u64,
        z: &[i64],
    ) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.transitions.len()];
        self.jump_rates_into(t, &theta.values, population, z, &mut out)?;
        Ok(out)
    }

    pub fn jump_rates_into(
        &self,
        t: f64,
        theta: &[f64],
        population: u64,
        z: &[i64],
        out: &mut [f64],
    ) -> Result<()> {
        let n = population as f64;
        let y: Vec<f64> = z.iter().map(|&c| c as f64 / n).collect();
        let mut target = z.to_vec();
        for (k, tr) in self.transitions.iter().enumerate() {
            for (dst, (&zi, &li)) in target.iter_mut().zip(z.iter().zip(tr.jump.as_slice())) {
                *dst = zi + li;
            }
            out[k] = if self.admissible(&target, population) {
                n * tr.beta(t, &y, theta)?
            } else {
                0.0
            };
        }
        Ok(())
    }

    /// Per-transition upper bounds on `α_l` over `[t0, t1]` at fixed `z`.
    pub fn jump_rate_majorants(
        &self,
        t0: f64,
        t1: f64,
        theta: &[f64],
        population: u64,
        z: &[i64],
        out: &mut [f64],
    ) {
        let n = population as f64;
        let y: Vec<f64> = z.iter().map(|&c| c as f64 / n).collect();
        let mut target = z.to_vec();
        for (k, tr) in self.transitions.iter().enumerate() {
            for (dst, (&zi, &li)) in target.iter_mut().zip(z.iter().zip(tr.jump.as_slice())) {
                *dst = zi + li;
            }
            out[k] = if self.admissible(&target, population) {
                n * tr.majorant(t0, t1, &y, theta).max(0.0)
            } else {
                0.0
            };
        }
    }

    /// Euclidean projection onto `[0,1]^p` (intersected with the simplex
    /// `Σ y ≤ 1` when the table declares it).
    pub fn project(&self, y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        if self.simplex && y.iter().sum::<f64>() > 1.0 {
            project_onto_unit_simplex(y);
        }
    }
}

/// Projection onto `{y ≥ 0, Σ y = 1}` (sort-based).
fn project_onto_unit_simplex(y: &mut [f64]) {
    let mut u = y.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut shift = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let candidate = (cum - 1.0) / (j + 1) as f64;
        if uj - candidate > 0.0 {
            shift = candidate;
        }
    }
    y.iter_mut().for_each(|v| *v = (*v - shift).max(0.0));
}

/// Lower-triangular `σ` with `σ σᵀ = Σ` (jittered Cholesky).
pub fn diffusion_sqrt(sigma: &[f64], dim: usize) -> Result<Vec<f64>> {
    Ok(Cholesky::factor(sigma, dim)?.lower)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{matmul_bt, max_abs_diff};

    fn toy() -> TransitionTable {
        let a = Transition::new("a", vec![-1, 1], |_, y, th| th[0] * y[0] * y[1]).unwrap();
        let b = Transition::new("b", vec![0, -1], |_, y, th| th[1] * y[1]).unwrap();
        TransitionTable::new("toy", vec!["S".into(), "I".into()], vec![a, b], false, 1)
            .unwrap()
            .with_simplex()
    }

    fn theta() -> ParamVector {
        ParamVector::new(&[("lambda", 0.5, 0.0, 10.0, true), ("gamma", 1.0 / 3.0, 0.0, 10.0, true)])
            .unwrap()
    }

    #[test]
    fn zero_jump_rejected() {
        assert!(JumpVector::new(vec![0, 0]).is_err());
        assert!(Transition::new("z", vec![0, 0], |_, _, _| 1.0).is_err());
    }

    #[test]
    fn jump_length_checked() {
        let t = Transition::new("x", vec![1, 0, 0], |_, _, _| 1.0).unwrap();
        assert!(TransitionTable::new("bad", vec!["A".into(), "B".into()], vec![t], false, 1).is_err());
        assert!(TransitionTable::new("empty", vec!["A".into()], vec![], false, 1).is_err());
    }

    #[test]
    fn negative_rate_is_domain_error() {
        let t = Transition::new("neg", vec![1], |_, _, _| -1.0).unwrap();
        let table = TransitionTable::new("neg", vec!["A".into()], vec![t], false, 1).unwrap();
        let th = ParamVector::new(&[("a", 1.0, 0.0, 2.0, true)]).unwrap();
        assert!(matches!(table.drift(0.0, &th, &[0.5]), Err(Error::RateDomain { .. })));
        let nan = Transition::new("nan", vec![1], |_, _, _| f64::NAN).unwrap();
        let table = TransitionTable::new("nan", vec!["A".into()], vec![nan], false, 1).unwrap();
        assert!(table.diffusion_matrix(0.0, &th, &[0.5]).is_err());
    }

    #[test]
    fn finite_difference_fallback_matches_closed_form() {
        let table = toy();
        let th = theta();
        let y = [0.7, 0.1];
        let fd_table = TransitionTable::new(
            "fd",
            table.compartments.clone(),
            table
                .transitions
                .iter()
                .cloned()
                .map(Transition::without_analytic_gradients)
                .collect(),
            false,
            1,
        )
        .unwrap();
        let j = fd_table.drift_jacobian(0.0, &th, &y).unwrap();
        let (l, g) = (0.5, 1.0 / 3.0);
        let expect = [-l * 0.1, -l * 0.7, l * 0.1, l * 0.7 - g];
        assert!(max_abs_diff(&j, &expect) < 1e-8);
        let jp = fd_table.drift_param_jacobian(0.0, &th, &y).unwrap();
        assert!(max_abs_diff(&jp, &[-0.07, 0.0, 0.07, -0.1]) < 1e-8);
    }

    #[test]
    fn clamp_zeroes_rates_leaving_state_space() {
        let table = toy();
        let r = table.jump_rates(0.0, &theta(), 10, &[0, 5]).unwrap();
        assert_eq!(r[0], 0.0);
        assert!(r[1] > 0.0);
    }

    #[test]
    fn projection_respects_simplex() {
        let table = toy();
        let mut y = [0.9, 0.3];
        table.project(&mut y);
        assert!((y[0] + y[1] - 1.0).abs() < 1e-15);
        assert!((y[0] - 0.8).abs() < 1e-12);
        let mut y = [-0.1, 1.4];
        table.project(&mut y);
        assert_eq!(y, [0.0, 1.0]);
    }

    #[test]
    fn sqrt_reconstructs() {
        let s = toy().diffusion_matrix(0.0, &theta(), &[0.7, 0.1]).unwrap();
        let l = diffusion_sqrt(&s, 2).unwrap();
        let mut llt = vec![0.0; 4];
        matmul_bt(&l, &l, 2, 2, 2, &mut llt);
        assert!(max_abs_diff(&llt, &s) < 1e-14);
        assert_eq!(l[1], 0.0);
    }

    #[test]
    fn param_vector_bounds() {
        assert!(ParamVector::new(&[("a", 2.0, 0.0, 1.0, true)]).is_err());
        let pv = theta().with_free_values(&[0.6, 0.2]);
        assert_eq!(pv.values, vec![0.6, 0.2]);
        assert_eq!(pv.free_names(), vec!["lambda", "gamma"]);
    }
}
