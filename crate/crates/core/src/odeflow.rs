//! Deterministic flow of a model: the ODE solution `x_θ`, the resolvent
//! `Φ_θ(t, u)`, parameter sensitivities `∂x_θ/∂θ`, and the per-interval
//! weight matrices `S_k`.
//!
//! Everything is integrated with fixed-step classical RK4 on a mesh that
//! refines the observation grid. Per observation interval `[t_{k-1}, t_k]`
//! the augmented system
//!
//! ```text
//! x' = b(t, x)
//! Φ' = J Φ,                Φ(t_{k-1}) = I
//! K' = J K + K Jᵀ + Σ,     K(t_{k-1}) = 0
//! ```
//!
//! is solved, so that `Φ_k = Φ(t_k, t_{k-1})` and
//! `K(t_k) = ∫ Φ(t_k,u) Σ(u) Φ(t_k,u)ᵀ du = Δ_k S_k`. The resolvent is never
//! propagated across more than one interval.

use crate::error::{Error, Result};
use crate::linalg::{identity, matmul, matmul_bt, sym_sqrt, Cholesky};
use crate::model::{LocalCoefficients, ParamVector, TransitionTable};

/// Admissible overshoot of the ODE outside `[0, 1]^p`.
const REGION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    /// Largest RK4 step (days).
    pub max_step: f64,
    pub sensitivities: bool,
    /// Feed the covariance equation `σ σᵀ` built from this square root
    /// instead of `Σ` itself. Only used to check that nothing depends on
    /// the choice of root.
    pub root: Option<SquareRoot>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SquareRoot {
    Cholesky,
    Symmetric,
}

impl FlowOptions {
    pub fn new(max_step: f64) -> Self {
        Self {
            max_step,
            sensitivities: false,
            root: None,
        }
    }

    pub fn with_sensitivities(mut self) -> Self {
        self.sensitivities = true;
        self
    }
}

/// Which blocks of the augmented state are integrated.
#[derive(Debug, Clone, Copy)]
struct Blocks {
    phi: bool,
    lyap: bool,
    sens: bool,
}

/// Augmented-state RK4 stepper; owns all scratch buffers.
struct Stepper<'a> {
    table: &'a TransitionTable,
    theta: &'a [f64],
    free: &'a [usize],
    p: usize,
    m: usize,
    blocks: Blocks,
    root: Option<SquareRoot>,
    coeffs: LocalCoefficients,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
    work: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(
        table: &'a TransitionTable,
        theta: &'a [f64],
        free: &'a [usize],
        blocks: Blocks,
    ) -> Self {
        let p = table.dim();
        let m = free.len();
        let len = Self::len_for(p, m, blocks);
        Self {
            table,
            theta,
            free,
            p,
            m,
            blocks,
            root: None,
            coeffs: LocalCoefficients::new(p, theta.len(), table.transitions.len()),
            k: [vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]],
            tmp: vec![0.0; len],
            work: vec![0.0; p * p.max(m)],
        }
    }

    fn len_for(p: usize, m: usize, b: Blocks) -> usize {
        p + if b.phi { p * p } else { 0 } + if b.lyap { p * p } else { 0 } + if b.sens { p * m } else { 0 }
    }

    fn len(&self) -> usize {
        Self::len_for(self.p, self.m, self.blocks)
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let p = self.p;
        let phi = p;
        let lyap = phi + if self.blocks.phi { p * p } else { 0 };
        let sens = lyap + if self.blocks.lyap { p * p } else { 0 };
        (phi, lyap, sens)
    }

    fn rhs(&mut self, t: f64, z: &[f64], dz: &mut [f64]) -> Result<()> {
        let p = self.p;
        let m = self.m;
        let (o_phi, o_lyap, o_sens) = self.offsets();
        self.table
            .evaluate(t, self.theta, &z[..p], self.blocks.sens, &mut self.coeffs)?;
        if let (true, Some(root)) = (self.blocks.lyap, self.root) {
            let sigma = match root {
                SquareRoot::Cholesky => Cholesky::factor(&self.coeffs.diffusion, p)?.lower,
                SquareRoot::Symmetric => sym_sqrt(&self.coeffs.diffusion, p),
            };
            matmul_bt(&sigma, &sigma, p, p, p, &mut self.coeffs.diffusion);
        }
        let c = &self.coeffs;
        dz[..p].copy_from_slice(&c.drift);
        if self.blocks.phi {
            matmul(&c.jacobian, &z[o_phi..o_phi + p * p], p, p, p, &mut dz[o_phi..o_phi + p * p]);
        }
        if self.blocks.lyap {
            let kmat = &z[o_lyap..o_lyap + p * p];
            matmul(&c.jacobian, kmat, p, p, p, &mut self.work[..p * p]);
            let out = &mut dz[o_lyap..o_lyap + p * p];
            for i in 0..p {
                for j in 0..p {
                    // (J K)_{ij} + (K Jᵀ)_{ij} = (J K)_{ij} + (J K)_{ji} for symmetric K
                    out[i * p + j] =
                        self.work[i * p + j] + self.work[j * p + i] + c.diffusion[i * p + j];
                }
            }
        }
        if self.blocks.sens {
            let n_all = self.theta.len();
            let s = &z[o_sens..o_sens + p * m];
            matmul(&c.jacobian, s, p, p, m, &mut self.work[..p * m]);
            let out = &mut dz[o_sens..o_sens + p * m];
            for i in 0..p {
                for (col, &pi) in self.free.iter().enumerate() {
                    out[i * m + col] = self.work[i * m + col] + c.drift_param[i * n_all + pi];
                }
            }
        }
        Ok(())
    }

    fn step(&mut self, t: f64, h: f64, z: &mut [f64]) -> Result<()> {
        let n = self.len();
        let mut k = std::mem::take(&mut self.k);
        let mut tmp = std::mem::take(&mut self.tmp);
        let res: Result<()> = (|| {
            self.rhs(t, z, &mut k[0])?;
            for i in 0..n {
                tmp[i] = z[i] + 0.5 * h * k[0][i];
            }
            self.rhs(t + 0.5 * h, &tmp, &mut k[1])?;
            for i in 0..n {
                tmp[i] = z[i] + 0.5 * h * k[1][i];
            }
            self.rhs(t + 0.5 * h, &tmp, &mut k[2])?;
            for i in 0..n {
                tmp[i] = z[i] + h * k[2][i];
            }
            self.rhs(t + h, &tmp, &mut k[3])?;
            for i in 0..n {
                z[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
            }
            Ok(())
        })();
        self.k = k;
        self.tmp = tmp;
        res?;
        check_state(t + h, &z[..self.p])
    }
}

fn check_state(t: f64, x: &[f64]) -> Result<()> {
    for (i, &v) in x.iter().enumerate() {
        if !v.is_finite() || v < -REGION_TOL || v > 1.0 + REGION_TOL {
            return Err(Error::OdeBlowUp {
                t,
                detail: format!("component {i} = {v}"),
            });
        }
    }
    Ok(())
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InvalidArgument("time grid needs at least two points".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument("time grid must be strictly increasing".into()));
    }
    Ok(())
}

fn substeps(span: f64, max_step: f64) -> usize {
    ((span.abs() / max_step) - 1e-9).ceil().max(1.0) as usize
}

/// Cached deterministic quantities for one parameter value on one grid.
#[derive(Debug, Clone)]
pub struct FlowCache {
    pub theta: ParamVector,
    pub dim: usize,
    /// Indices (into `theta`) of the parameters carried by the sensitivities.
    pub free: Vec<usize>,
    pub grid: Vec<f64>,
    pub mesh: Vec<f64>,
    /// `grid[k] == mesh[grid_mesh_index[k]]`.
    pub grid_mesh_index: Vec<usize>,
    /// `x_θ` on the mesh, `dim` values per point.
    pub x_mesh: Vec<f64>,
    /// `∂x_θ/∂θ_free` on the mesh, `dim × free.len()` per point.
    pub sens_mesh: Option<Vec<f64>>,
    /// `Φ(t_k, t_{k-1})` for `k = 1..=n` (stored at `k - 1`).
    pub phi: Vec<Vec<f64>>,
    /// `S_k` for `k = 1..=n` (stored at `k - 1`).
    pub weights: Vec<Vec<f64>>,
    pub options: FlowOptions,
    table: TransitionTable,
}

impl FlowCache {
    pub fn build(
        table: &TransitionTable,
        theta: &ParamVector,
        x0: &[f64],
        grid: &[f64],
        options: FlowOptions,
    ) -> Result<Self> {
        validate_grid(grid)?;
        let p = table.dim();
        if x0.len() != p {
            return Err(Error::InvalidArgument(format!("x0 has length {}, expected {p}", x0.len())));
        }
        check_state(grid[0], x0)?;
        let free = theta.free_indices();
        let m = free.len();
        let blocks = Blocks {
            phi: true,
            lyap: true,
            sens: options.sensitivities,
        };
        let mut stepper = Stepper::new(table, &theta.values, &free, blocks);
        stepper.root = options.root;
        let (o_phi, o_lyap, o_sens) = stepper.offsets();
        let mut z = vec![0.0; stepper.len()];
        z[..p].copy_from_slice(x0);

        let n = grid.len() - 1;
        let mut mesh = vec![grid[0]];
        let mut x_mesh = x0.to_vec();
        let mut sens_mesh = options.sensitivities.then(|| vec![0.0; p * m]);
        let mut grid_mesh_index = vec![0];
        let mut phi = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let eye = identity(p);

        for k in 1..=n {
            let (a, b) = (grid[k - 1], grid[k]);
            let delta = b - a;
            z[o_phi..o_phi + p * p].copy_from_slice(&eye);
            z[o_lyap..o_lyap + p * p].iter_mut().for_each(|v| *v = 0.0);
            let steps = substeps(delta, options.max_step);
            let h = delta / steps as f64;
            for s in 0..steps {
                let t = a + s as f64 * h;
                stepper.step(t, h, &mut z)?;
                mesh.push(if s + 1 == steps { b } else { t + h });
                x_mesh.extend_from_slice(&z[..p]);
                if let Some(sm) = sens_mesh.as_mut() {
                    sm.extend_from_slice(&z[o_sens..o_sens + p * m]);
                }
            }
            grid_mesh_index.push(mesh.len() - 1);
            phi.push(z[o_phi..o_phi + p * p].to_vec());
            let mut w: Vec<f64> = z[o_lyap..o_lyap + p * p].iter().map(|v| v / delta).collect();
            symmetrize(&mut w, p);
            weights.push(w);
        }

        Ok(Self {
            theta: theta.clone(),
            dim: p,
            free,
            grid: grid.to_vec(),
            mesh,
            grid_mesh_index,
            x_mesh,
            sens_mesh,
            phi,
            weights,
            options,
            table: table.clone(),
        })
    }

    pub fn n_intervals(&self) -> usize {
        self.grid.len() - 1
    }

    /// `x_θ(t_k)`.
    pub fn state(&self, k: usize) -> &[f64] {
        let j = self.grid_mesh_index[k];
        &self.x_mesh[j * self.dim..(j + 1) * self.dim]
    }

    pub fn mesh_state(&self, j: usize) -> &[f64] {
        &self.x_mesh[j * self.dim..(j + 1) * self.dim]
    }

    /// `∂x_θ(t_k)/∂θ_free`, `dim × free.len()` row-major.
    pub fn sensitivity(&self, k: usize) -> Option<&[f64]> {
        let j = self.grid_mesh_index[k];
        let w = self.dim * self.free.len();
        self.sens_mesh.as_ref().map(|s| &s[j * w..(j + 1) * w])
    }

    /// `Φ(t_k, t_{k-1})`, `1 ≤ k ≤ n`.
    pub fn interval_resolvent(&self, k: usize) -> &[f64] {
        &self.phi[k - 1]
    }

    /// `S_k`, `1 ≤ k ≤ n`.
    pub fn weight_matrix(&self, k: usize) -> &[f64] {
        &self.weights[k - 1]
    }

    pub fn delta(&self, k: usize) -> f64 {
        self.grid[k] - self.grid[k - 1]
    }

    /// `x_θ(u)` for `u` inside the mesh span (one short RK4 step from the
    /// nearest mesh point at or before `u`).
    pub fn state_at(&self, u: f64) -> Result<Vec<f64>> {
        let (lo, hi) = (self.mesh[0], *self.mesh.last().unwrap());
        if !(lo..=hi).contains(&u) {
            return Err(Error::OutOfRange { t: u, end: hi });
        }
        let j = match self.mesh.binary_search_by(|m| m.total_cmp(&u)) {
            Ok(j) => return Ok(self.mesh_state(j).to_vec()),
            Err(j) => j - 1,
        };
        let no_extra = Blocks {
            phi: false,
            lyap: false,
            sens: false,
        };
        let mut stepper = Stepper::new(&self.table, &self.theta.values, &[], no_extra);
        let mut z = self.mesh_state(j).to_vec();
        stepper.step(self.mesh[j], u - self.mesh[j], &mut z)?;
        Ok(z)
    }

    /// `Φ(t, u)`; integrates the variational equation along the cached flow.
    /// Either ordering of `t` and `u` is accepted (backward integration gives
    /// the inverse).
    pub fn resolvent(&self, t: f64, u: f64) -> Result<Vec<f64>> {
        let p = self.dim;
        if t == u {
            return Ok(identity(p));
        }
        let end = *self.mesh.last().unwrap();
        if !(self.mesh[0]..=end).contains(&t) {
            return Err(Error::OutOfRange { t, end });
        }
        let x_u = self.state_at(u)?;
        let blocks = Blocks {
            phi: true,
            lyap: false,
            sens: false,
        };
        let mut stepper = Stepper::new(&self.table, &self.theta.values, &[], blocks);
        let mut z = vec![0.0; p + p * p];
        z[..p].copy_from_slice(&x_u);
        z[p..].copy_from_slice(&identity(p));
        let steps = substeps(t - u, self.options.max_step);
        let h = (t - u) / steps as f64;
        for s in 0..steps {
            stepper.step(u + s as f64 * h, h, &mut z)?;
        }
        Ok(z[p..].to_vec())
    }

    /// Rebuilds on a mesh with half the step and reports the largest change
    /// in `x_θ(t_k)`, `Φ_k` and `S_k` (relative to `1 + |value|`).
    pub fn refinement_defect(&self) -> Result<f64> {
        let x0 = self.mesh_state(0).to_vec();
        let opts = FlowOptions {
            max_step: self.options.max_step / 2.0,
            ..self.options
        };
        let fine = FlowCache::build(&self.table, &self.theta, &x0, &self.grid, opts)?;
        let mut worst = 0.0_f64;
        let rel = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(u, v)| (u - v).abs() / (1.0 + v.abs()))
                .fold(0.0, f64::max)
        };
        for k in 0..self.grid.len() {
            worst = worst.max(rel(self.state(k), fine.state(k)));
        }
        for k in 1..self.grid.len() {
            worst = worst.max(rel(self.interval_resolvent(k), fine.interval_resolvent(k)));
            worst = worst.max(rel(self.weight_matrix(k), fine.weight_matrix(k)));
        }
        Ok(worst)
    }

    pub fn table(&self) -> &TransitionTable {
        &self.table
    }
}

fn symmetrize(a: &mut [f64], p: usize) {
    for i in 0..p {
        for j in (i + 1)..p {
            let v = 0.5 * (a[i * p + j] + a[j * p + i]);
            a[i * p + j] = v;
            a[j * p + i] = v;
        }
    }
}

/// `x_θ` at the grid points.
pub fn solve_ode(
    table: &TransitionTable,
    theta: &ParamVector,
    x0: &[f64],
    grid: &[f64],
    max_step: f64,
) -> Result<Vec<Vec<f64>>> {
    validate_grid(grid)?;
    let p = table.dim();
    check_state(grid[0], x0)?;
    let blocks = Blocks {
        phi: false,
        lyap: false,
        sens: false,
    };
    let mut stepper = Stepper::new(table, &theta.values, &[], blocks);
    let mut z = x0.to_vec();
    let mut out = vec![x0.to_vec()];
    for w in grid.windows(2) {
        let steps = substeps(w[1] - w[0], max_step);
        let h = (w[1] - w[0]) / steps as f64;
        for s in 0..steps {
            stepper.step(w[0] + s as f64 * h, h, &mut z)?;
        }
        debug_assert_eq!(z.len(), p);
        out.push(z.clone());
    }
    Ok(out)
}

/// `∂x_θ(t_k)/∂θ_i` for each free `i`, one `p × m` matrix per grid point.
pub fn sensitivities(
    table: &TransitionTable,
    theta: &ParamVector,
    x0: &[f64],
    grid: &[f64],
    max_step: f64,
) -> Result<Vec<Vec<f64>>> {
    let flow = FlowCache::build(table, theta, x0, grid, FlowOptions::new(max_step).with_sensitivities())?;
    Ok((0..grid.len())
        .map(|k| flow.sensitivity(k).unwrap().to_vec())
        .collect())
}

/// Continuous-observation information
/// `∫_{t0}^{T} (∂_θ b)ᵀ Σ⁻¹ (∂_θ b) dt` along `x_θ`, restricted to the free
/// parameters (`m × m`, row-major). Integrated as an extra RK4 component.
pub fn information_bound(
    table: &TransitionTable,
    theta: &ParamVector,
    x0: &[f64],
    t0: f64,
    horizon: f64,
    max_step: f64,
) -> Result<Vec<f64>> {
    let p = table.dim();
    let free = theta.free_indices();
    let m = free.len();
    let n_all = theta.len();
    let mut coeffs = LocalCoefficients::new(p, n_all, table.transitions.len());
    let mut rhs = |t: f64, z: &[f64], dz: &mut [f64]| -> Result<()> {
        table.evaluate(t, &theta.values, &z[..p], true, &mut coeffs)?;
        dz[..p].copy_from_slice(&coeffs.drift);
        let chol = Cholesky::factor_pd(&coeffs.diffusion, p)?;
        let mut b = vec![0.0; p * m];
        for i in 0..p {
            for (c, &pi) in free.iter().enumerate() {
                b[i * m + c] = coeffs.drift_param[i * n_all + pi];
            }
        }
        // Σ⁻¹ B column by column.
        let mut sinv_b = vec![0.0; p * m];
        for c in 0..m {
            let mut col: Vec<f64> = (0..p).map(|i| b[i * m + c]).collect();
            chol.solve_in_place(&mut col);
            for i in 0..p {
                sinv_b[i * m + c] = col[i];
            }
        }
        let bt = crate::linalg::transpose(&b, p, m);
        matmul(&bt, &sinv_b, m, p, m, &mut dz[p..]);
        Ok(())
    };
    let len = p + m * m;
    let mut z = vec![0.0; len];
    z[..p].copy_from_slice(x0);
    let steps = substeps(horizon - t0, max_step);
    let h = (horizon - t0) / steps as f64;
    let mut k: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; len]);
    let mut tmp = vec![0.0; len];
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        rhs(t, &z, &mut k[0])?;
        (0..len).for_each(|i| tmp[i] = z[i] + 0.5 * h * k[0][i]);
        rhs(t + 0.5 * h, &tmp, &mut k[1])?;
        (0..len).for_each(|i| tmp[i] = z[i] + 0.5 * h * k[1][i]);
        rhs(t + 0.5 * h, &tmp, &mut k[2])?;
        (0..len).for_each(|i| tmp[i] = z[i] + h * k[2][i]);
        rhs(t + h, &tmp, &mut k[3])?;
        (0..len).for_each(|i| z[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]));
        check_state(t + h, &z[..p])?;
    }
    let mut out = z[p..].to_vec();
    symmetrize(&mut out, m);
    Ok(out)
}

/// `∫_0^t Φ(t,u) Σ(u) Φ(t,u)ᵀ du` assembled from per-interval pieces:
/// `C_k = Φ_k C_{k-1} Φ_kᵀ + Δ_k S_k`. Returns the covariance at every grid
/// point.
pub fn gaussian_covariance(flow: &FlowCache) -> Vec<Vec<f64>> {
    let p = flow.dim;
    let mut c = vec![0.0; p * p];
    let mut out = vec![c.clone()];
    let mut tmp = vec![0.0; p * p];
    let mut next = vec![0.0; p * p];
    for k in 1..=flow.n_intervals() {
        let phi = flow.interval_resolvent(k);
        matmul(phi, &c, p, p, p, &mut tmp);
        matmul_bt(&tmp, phi, p, p, p, &mut next);
        let d = flow.delta(k);
        for (dst, s) in next.iter_mut().zip(flow.weight_matrix(k)) {
            *dst += d * s;
        }
        c.copy_from_slice(&next);
        out.push(c.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use crate::model::Transition;

    fn constant_table(c: [f64; 3]) -> TransitionTable {
        // Three jumps with constant rates and zero net drift: Σ constant, ∇b = 0.
        let t1 = Transition::new("a", vec![1, 0], move |_, _, _| c[0]).unwrap();
        let t2 = Transition::new("b", vec![-1, 0], move |_, _, _| c[0]).unwrap();
        let t3 = Transition::new("c", vec![0, 1], move |_, _, _| c[1]).unwrap();
        let t4 = Transition::new("d", vec![0, -1], move |_, _, _| c[1]).unwrap();
        let t5 = Transition::new("e", vec![1, 1], move |_, _, _| c[2]).unwrap();
        let t6 = Transition::new("f", vec![-1, -1], move |_, _, _| c[2]).unwrap();
        TransitionTable::new("const", vec!["A".into(), "B".into()], vec![t1, t2, t3, t4, t5, t6], false, 1)
            .unwrap()
    }

    fn dummy_theta() -> ParamVector {
        ParamVector::new(&[("unused", 1.0, 0.5, 2.0, true)]).unwrap()
    }

    #[test]
    fn zero_drift_keeps_state() {
        let table = constant_table([0.5, 0.5, 0.0]);
        let xs = solve_ode(&table, &dummy_theta(), &[0.3, 0.4], &[0.0, 1.0, 5.0], 0.1).unwrap();
        for x in xs {
            assert_eq!(x, vec![0.3, 0.4]);
        }
    }

    #[test]
    fn weight_matrix_with_constant_sigma() {
        // Σ = [[2a + 2c, 2c], [2c, 2b + 2c]]; with a = b = 0.5, c = 0 this is I.
        let table = constant_table([0.5, 0.5, 0.0]);
        let flow = FlowCache::build(&table, &dummy_theta(), &[0.5, 0.5], &[0.0, 0.7, 2.0], FlowOptions::new(0.05))
            .unwrap();
        for k in 1..=2 {
            assert!(max_abs_diff(flow.weight_matrix(k), &identity(2)) < 1e-13);
            assert!(max_abs_diff(flow.interval_resolvent(k), &identity(2)) < 1e-15);
        }
        let table = constant_table([0.5, 0.25, 0.125]);
        let flow = FlowCache::build(&table, &dummy_theta(), &[0.5, 0.5], &[0.0, 1.0], FlowOptions::new(0.05)).unwrap();
        assert!(max_abs_diff(flow.weight_matrix(1), &[1.25, 0.25, 0.25, 0.75]) < 1e-13);
    }

    #[test]
    fn bad_grid_rejected() {
        let table = constant_table([0.5, 0.5, 0.0]);
        assert!(FlowCache::build(&table, &dummy_theta(), &[0.5, 0.5], &[0.0], FlowOptions::new(0.1)).is_err());
        assert!(FlowCache::build(&table, &dummy_theta(), &[0.5, 0.5], &[0.0, 1.0, 1.0], FlowOptions::new(0.1)).is_err());
    }

    #[test]
    fn parameter_absent_from_drift_has_zero_sensitivity() {
        let table = constant_table([0.5, 0.5, 0.0]);
        let s = sensitivities(&table, &dummy_theta(), &[0.5, 0.5], &[0.0, 1.0, 2.0], 0.1).unwrap();
        for m in s {
            assert!(m.iter().all(|v| v.abs() < 1e-12));
        }
    }
}
